#pragma once

// FMAP map container, JSON scene manifests and report writers.
//
// FMAP layout (all integers little-endian u32):
//   "FMAP" | version (=1) | dtype | height | width | channels | payload
// dtype 1 = float32, 2 = uint16, 3 = float64. Payload is row-major
// little-endian, H * W * C values.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "planekit/geometry.hpp"
#include "planekit/image.hpp"
#include "planekit/losses.hpp"
#include "planekit/metrics.hpp"
#include "planekit/planehead.hpp"
#include "planekit/synth.hpp"

namespace planekit::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class DType : std::uint32_t { float32 = 1, uint16 = 2, float64 = 3 };

inline constexpr std::uint32_t kFmapVersion = 1;

inline std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::float32: return 4;
        case DType::uint16: return 2;
        case DType::float64: return 8;
    }
    throw Error(Errc::io, "unknown FMAP dtype");
}

/// Decoded FMAP contents; values widened to double.
struct FmapFile {
    DType dtype = DType::float32;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 1;
    std::vector<double> values;
};

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
    for (std::size_t b = 0; b < sizeof(U); ++b) {
        out.push_back(static_cast<char>((value >> (8 * b)) & 0xFF));
    }
}

template <typename U>
U get_le(std::string_view in, std::size_t offset) {
    U value = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) {
        value |= static_cast<U>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
    }
    return value;
}

} // namespace detail

inline std::string encode_fmap(const FmapFile& f) {
    require(f.values.size() == static_cast<std::size_t>(f.height) * f.width * f.channels, Errc::invalid_input,
            "FMAP value count does not match its dimensions");
    std::string out = "FMAP";
    detail::put_le<std::uint32_t>(out, kFmapVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.dtype));
    detail::put_le<std::uint32_t>(out, f.height);
    detail::put_le<std::uint32_t>(out, f.width);
    detail::put_le<std::uint32_t>(out, f.channels);
    out.reserve(out.size() + f.values.size() * dtype_size(f.dtype));
    for (const double v : f.values) {
        switch (f.dtype) {
            case DType::float32:
                detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
                break;
            case DType::float64:
                detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
                break;
            case DType::uint16:
                require(v >= 0 && v <= 65535 && v == std::floor(v), Errc::invalid_input,
                        "uint16 FMAP value out of range");
                detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(v));
                break;
        }
    }
    return out;
}

inline FmapFile decode_fmap(std::string_view bytes) {
    require(bytes.size() >= 24 && bytes.substr(0, 4) == "FMAP", Errc::io, "not an FMAP file");
    require(detail::get_le<std::uint32_t>(bytes, 4) == kFmapVersion, Errc::io, "unsupported FMAP version");
    FmapFile f;
    const auto code = detail::get_le<std::uint32_t>(bytes, 8);
    require(code >= 1 && code <= 3, Errc::io, "unknown FMAP dtype");
    f.dtype = static_cast<DType>(code);
    f.height = detail::get_le<std::uint32_t>(bytes, 12);
    f.width = detail::get_le<std::uint32_t>(bytes, 16);
    f.channels = detail::get_le<std::uint32_t>(bytes, 20);
    const std::size_t n = static_cast<std::size_t>(f.height) * f.width * f.channels;
    const std::size_t elem = dtype_size(f.dtype);
    require(bytes.size() == 24 + n * elem, Errc::io, "FMAP payload length does not match its header");
    f.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = 24 + i * elem;
        switch (f.dtype) {
            case DType::float32:
                f.values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, at));
                break;
            case DType::float64:
                f.values[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, at));
                break;
            case DType::uint16:
                f.values[i] = detail::get_le<std::uint16_t>(bytes, at);
                break;
        }
    }
    return f;
}

/// Writes to a temporary sibling and renames it into place.
inline void write_file_atomic(const fs::path& path, std::string_view contents) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(Errc::io, "cannot write " + path.string());
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) {
            throw Error(Errc::io, "short write to " + path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(Errc::io, "cannot move " + tmp.string() + " into place");
    }
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::io, "cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename T>
FmapFile to_fmap(const Image<T>& image, DType dtype) {
    FmapFile f{dtype, static_cast<std::uint32_t>(image.height()), static_cast<std::uint32_t>(image.width()),
               static_cast<std::uint32_t>(image.channels()), {}};
    f.values.assign(image.data().begin(), image.data().end());
    return f;
}

template <typename T>
Image<T> from_fmap(const FmapFile& f) {
    Image<T> image(static_cast<int>(f.height), static_cast<int>(f.width), static_cast<int>(f.channels));
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        image[i] = static_cast<T>(f.values[i]);
    }
    return image;
}

template <typename T>
void write_fmap(const fs::path& path, const Image<T>& image, DType dtype) {
    write_file_atomic(path, encode_fmap(to_fmap(image, dtype)));
}

inline FmapFile read_fmap(const fs::path& path) { return decode_fmap(read_file(path)); }

// ---------------------------------------------------------------------------
// Manifests

inline json matrix_json(const Mat4& m) {
    json out = json::array();
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            out.push_back(m(r, c));
        }
    }
    return out;
}

inline RigidTransform transform_from_json(const json& j) {
    require(j.is_array() && j.size() == 16, Errc::invalid_input, "transform must be 16 numbers");
    Mat4 m;
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            m(r, c) = j.at(r * 4 + c).get<double>();
        }
    }
    return RigidTransform::from_matrix(m);
}

inline json camera_json(const CameraIntrinsics& k) {
    return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics camera_from_json(const json& j) {
    CameraIntrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                       j.at("cy").get<double>(),  j.at("width").get<int>(), j.at("height").get<int>()};
    k.validate();
    return k;
}

struct PairLink {
    std::string neighbour;
    /// this view -> linked view.
    RigidTransform to_neighbour;
};

/// A view as stored on disk. `full_*` hold labels before instance dropout.
struct StoredView {
    RenderedView view;
    std::optional<InstanceMap> full_instances;
    std::optional<VectorMap> full_planes;
    std::optional<PairLink> pair;
    std::map<std::int32_t, double> scores;
    /// Optional per-instance soft masks, one channel per `classes` entry in id order.
    std::optional<VectorMap> soft_masks;
    fs::path manifest;
};

/// Writes <stem>.json plus <stem>_{rgb,depth,instances,planes}.fmap.
inline void write_view(const fs::path& dir, const std::string& stem, const RenderedView& view,
                       const std::optional<PairLink>& pair = std::nullopt,
                       const RenderedView* full_labels = nullptr) {
    json files = {{"rgb", stem + "_rgb.fmap"},
                  {"depth", stem + "_depth.fmap"},
                  {"instances", stem + "_instances.fmap"},
                  {"planes", stem + "_planes.fmap"}};
    write_fmap(dir / files["rgb"].get<std::string>(), view.rgb, DType::float32);
    write_fmap(dir / files["depth"].get<std::string>(), view.depth, DType::float32);
    write_fmap(dir / files["instances"].get<std::string>(), view.instances, DType::uint16);
    write_fmap(dir / files["planes"].get<std::string>(), view.plane_map, DType::float32);
    if (full_labels) {
        files["instances_full"] = stem + "_instances_full.fmap";
        files["planes_full"] = stem + "_planes_full.fmap";
        write_fmap(dir / files["instances_full"].get<std::string>(), full_labels->instances, DType::uint16);
        write_fmap(dir / files["planes_full"].get<std::string>(), full_labels->plane_map, DType::float32);
    }
    json classes = json::array();
    for (const auto& [id, c] : view.classes) {
        classes.push_back({{"instance", id}, {"class", c}});
    }
    json manifest = {{"camera", camera_json(view.camera)},
                     {"pose", matrix_json(view.pose.matrix())},
                     {"files", files},
                     {"classes", classes}};
    if (pair) {
        manifest["pair"] = {{"neighbour", pair->neighbour}, {"T_sn", matrix_json(pair->to_neighbour.matrix())}};
    }
    write_file_atomic(dir / (stem + ".json"), manifest.dump(2) + "\n");
}

inline StoredView read_view(const fs::path& manifest_path) {
    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw Error(Errc::io, "malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    const fs::path dir = manifest_path.parent_path();
    StoredView out;
    out.manifest = manifest_path;
    try {
        auto& v = out.view;
        v.camera = camera_from_json(manifest.at("camera"));
        v.pose = transform_from_json(manifest.at("pose"));
        const auto& files = manifest.at("files");
        v.rgb = from_fmap<double>(read_fmap(dir / files.at("rgb").get<std::string>()));
        v.depth = from_fmap<double>(read_fmap(dir / files.at("depth").get<std::string>()));
        v.instances = from_fmap<std::int32_t>(read_fmap(dir / files.at("instances").get<std::string>()));
        v.plane_map = from_fmap<double>(read_fmap(dir / files.at("planes").get<std::string>()));
        if (files.contains("instances_full")) {
            out.full_instances = from_fmap<std::int32_t>(read_fmap(dir / files.at("instances_full").get<std::string>()));
        }
        if (files.contains("planes_full")) {
            out.full_planes = from_fmap<double>(read_fmap(dir / files.at("planes_full").get<std::string>()));
        }
        if (files.contains("soft_masks")) {
            out.soft_masks = from_fmap<double>(read_fmap(dir / files.at("soft_masks").get<std::string>()));
        }
        for (const auto& entry : manifest.at("classes")) {
            const auto id = entry.at("instance").get<std::int32_t>();
            v.classes[id] = entry.at("class").get<int>();
            if (entry.contains("score")) {
                out.scores[id] = entry.at("score").get<double>();
            }
        }
        if (manifest.contains("pair")) {
            out.pair = PairLink{manifest["pair"].at("neighbour").get<std::string>(),
                                transform_from_json(manifest["pair"].at("T_sn"))};
        }
        const bool sizes_ok = v.rgb.same_shape(v.camera.height, v.camera.width) && v.rgb.channels() == 3 &&
                              v.depth.same_shape(v.rgb) && v.instances.same_shape(v.rgb) &&
                              v.plane_map.same_shape(v.rgb) && v.plane_map.channels() == 3;
        require(sizes_ok, Errc::io, "map sizes disagree with the manifest camera");
    } catch (const json::exception& e) {
        throw Error(Errc::io, "malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    return out;
}

/// The view with its dropped labels restored, when the manifest has them.
inline RenderedView full_label_view(const StoredView& stored) {
    RenderedView v = stored.view;
    if (stored.full_instances) {
        v.instances = *stored.full_instances;
    }
    if (stored.full_planes) {
        v.plane_map = *stored.full_planes;
    }
    return v;
}

struct StoredPair {
    StoredView source;
    StoredView neighbour;
    StereoSample sample;
};

inline StoredPair read_pair(const fs::path& source_manifest) {
    StoredPair out;
    out.source = read_view(source_manifest);
    require(out.source.pair.has_value(), Errc::io, "manifest has no pair link");
    out.neighbour = read_view(source_manifest.parent_path() / out.source.pair->neighbour);
    out.sample.source = out.source.view;
    out.sample.neighbour = out.neighbour.view;
    out.sample.src_to_nbr = out.source.pair->to_neighbour;
    out.sample.nbr_to_src = out.sample.src_to_nbr.inverse();
    if (out.neighbour.pair) {
        const Mat4 loop = out.neighbour.pair->to_neighbour.matrix() * out.sample.src_to_nbr.matrix();
        require((loop - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-9, Errc::io,
                "pair transforms are not mutually inverse");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Head checkpoints: FMAP float64, H = 1, W = parameter count, C = 1, with the
// layer sizes in a JSON sidecar.

inline void write_head(const fs::path& path, const PlaneHead& head) {
    head.validate();
    FmapFile f{DType::float64, 1, static_cast<std::uint32_t>(head.params.size()), 1, head.params};
    write_file_atomic(path, encode_fmap(f));
    fs::path meta = path;
    meta += ".json";
    write_file_atomic(meta, json{{"in_channels", head.in_channels}, {"hidden", head.hidden}}.dump() + "\n");
}

inline PlaneHead read_head(const fs::path& path) {
    fs::path meta = path;
    meta += ".json";
    const json j = json::parse(read_file(meta));
    PlaneHead head{j.at("in_channels").get<int>(), j.at("hidden").get<int>(), read_fmap(path).values};
    head.validate();
    return head;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline std::string loss_csv_header() {
    return "step,l_plane,l_surface,l_geom,l_depth,l_p,l_mask,l_category,l_total,valid_pixels,excluded_pixels";
}

inline std::string loss_csv_row(long step, const LossReport& r) {
    std::ostringstream ss;
    ss << step << ',' << format_number(r.l_plane) << ',' << format_number(r.l_surface) << ','
       << format_number(r.l_geom) << ',' << format_number(r.l_depth) << ',' << format_number(r.l_p) << ','
       << format_number(r.l_mask) << ',' << format_number(r.l_category) << ',' << format_number(r.l_total) << ','
       << r.valid_pixel_count << ',' << r.excluded_pixel_count;
    return ss.str();
}

inline json loss_json(const LossReport& r) {
    return {{"l_plane", r.l_plane}, {"l_surface", r.l_surface}, {"l_geom", r.l_geom},
            {"l_depth", r.l_depth}, {"l_p", r.l_p},             {"l_mask", r.l_mask},
            {"l_category", r.l_category}, {"l_total", r.l_total}, {"valid_pixel_count", r.valid_pixel_count},
            {"excluded_pixel_count", r.excluded_pixel_count}};
}

/// Metric columns of the evaluation CSV, in order.
inline constexpr std::string_view kMetricColumns = "abs_rel,sq_rel,rmse,log_rmse,delta1,delta2,delta3,ap,map";

struct ImageMetrics {
    DepthMetricsReport depth;
    double ap = 0;
    double map = 0;
};

inline std::string metrics_csv_cells(const ImageMetrics& m) {
    const double cells[] = {m.depth.abs_rel, m.depth.sq_rel, m.depth.rmse, m.depth.log_rmse, m.depth.delta1,
                            m.depth.delta2,  m.depth.delta3, m.ap,         m.map};
    std::string out;
    for (std::size_t i = 0; i < std::size(cells); ++i) {
        if (i) {
            out += ',';
        }
        out += format_number(cells[i]);
    }
    return out;
}

struct RecallSeries {
    std::string label;
    RecallCurve curve;
};

/// Recall-vs-threshold plot, one polyline per series.
inline std::string recall_svg(const std::vector<RecallSeries>& series) {
    constexpr double width = 480, height = 360, left = 60, right = 20, top = 20, bottom = 50;
    double max_t = 0;
    for (const auto& s : series) {
        for (const double t : s.curve.thresholds) {
            max_t = std::max(max_t, t);
        }
    }
    if (max_t <= 0) {
        max_t = 1;
    }
    auto x = [&](double t) { return left + (width - left - right) * t / max_t; };
    auto y = [&](double r) { return top + (height - top - bottom) * (1.0 - r); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    std::ostringstream ss;
    ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    ss << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    ss << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << x(max_t) << "\" y2=\"" << y(0)
       << "\" stroke=\"black\"/>\n";
    ss << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << left << "\" y2=\"" << y(1)
       << "\" stroke=\"black\"/>\n";
    ss << "<text x=\"" << (left + width - right) / 2 << "\" y=\"" << height - 12
       << "\" text-anchor=\"middle\" font-size=\"13\">depth threshold (m)</text>\n";
    ss << "<text x=\"16\" y=\"" << (top + height - bottom) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" "
       << "transform=\"rotate(-90 16 " << (top + height - bottom) / 2 << ")\">per-pixel recall</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double t = max_t * k / 4.0;
        ss << "<text x=\"" << x(t) << "\" y=\"" << y(0) + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
           << format_number(t) << "</text>\n";
        ss << "<text x=\"" << left - 6 << "\" y=\"" << y(k / 4.0) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
           << format_number(k / 4.0) << "</text>\n";
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        ss << "<polyline fill=\"none\" stroke=\"" << colors[i % std::size(colors)] << "\" stroke-width=\"2\" "
           << "data-label=\"" << s.label << "\" points=\"";
        for (std::size_t k = 0; k < s.curve.thresholds.size(); ++k) {
            ss << (k ? " " : "") << format_number(x(s.curve.thresholds[k])) << ','
               << format_number(y(s.curve.recall[k]));
        }
        ss << "\"/>\n";
        ss << "<text x=\"" << width - right - 4 << "\" y=\"" << y(0) - 8 - 16.0 * i
           << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << colors[i % std::size(colors)] << "\">" << s.label
           << "</text>\n";
    }
    ss << "</svg>\n";
    return ss.str();
}

} // namespace planekit::io
