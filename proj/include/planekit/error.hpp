#pragma once

#include <stdexcept>
#include <string>

namespace planekit {

enum class Errc {
    invalid_input,
    degenerate_ray,
    plane_through_origin,
    empty_loss,
    empty_instance,
    empty_metric,
    io,
};

inline const char* to_string(Errc code) {
    switch (code) {
        case Errc::invalid_input: return "invalid input";
        case Errc::degenerate_ray: return "degenerate ray";
        case Errc::plane_through_origin: return "plane through origin";
        case Errc::empty_loss: return "empty loss";
        case Errc::empty_instance: return "empty instance";
        case Errc::empty_metric: return "empty metric";
        case Errc::io: return "io error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

inline void require(bool condition, Errc code, const char* what) {
    if (!condition) {
        throw Error(code, what);
    }
}

inline void require(bool condition, Errc code, const std::string& what) {
    if (!condition) {
        throw Error(code, what);
    }
}

} // namespace planekit
