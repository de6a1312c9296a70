#include <gtest/gtest.h>

#include <sstream>

#include "commands.hpp"
#include "test_support.hpp"

using namespace planekit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = 0;
    std::string out;
    std::string err;
};

Outcome invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "planekit");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::string> files_in(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
        names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

std::size_t occurrences(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) {
        ++n;
    }
    return n;
}

Outcome small_pairs(const fs::path& dir, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"synth-gen", "--out",   dir.string(), "--scenes", "2",  "--pairs",
                                     "--width",   "48",      "--height",   "36",       "--seed", "3"};
    args.insert(args.end(), extra.begin(), extra.end());
    return invoke(args);
}

} // namespace

TEST(CliSynthGen, SingleSceneWritesManifestAndFourMaps) {
    const auto dir = test::scratch_dir("cli_synth_one");
    const auto r = invoke({"synth-gen", "--out", dir.string(), "--scenes", "1", "--boxes", "0", "--width", "32",
                        "--height", "24"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto names = files_in(dir);
    EXPECT_EQ(std::count_if(names.begin(), names.end(), [](const std::string& n) { return n.ends_with(".json"); }),
              1);
    EXPECT_EQ(std::count_if(names.begin(), names.end(), [](const std::string& n) { return n.ends_with(".fmap"); }),
              4);
    EXPECT_EQ(names.size(), 5u);
}

TEST(CliSynthGen, SameSeedIsByteIdentical) {
    const auto a = test::scratch_dir("cli_synth_a");
    const auto b = test::scratch_dir("cli_synth_b");
    ASSERT_EQ(small_pairs(a, {"--drop-prob", "0.5"}).code, 0);
    ASSERT_EQ(small_pairs(b, {"--drop-prob", "0.5"}).code, 0);
    const auto names = files_in(a);
    ASSERT_EQ(names, files_in(b));
    for (const auto& n : names) {
        EXPECT_EQ(slurp(a / n), slurp(b / n)) << n;
    }
}

TEST(CliSynthGen, PairsAreCrossLinked) {
    const auto dir = test::scratch_dir("cli_synth_pairs");
    ASSERT_EQ(small_pairs(dir).code, 0);
    for (const char* stem : {"pair_0000", "pair_0001"}) {
        const auto src = io::read_view(dir / (std::string(stem) + "_src.json"));
        const auto nbr = io::read_view(dir / (std::string(stem) + "_nbr.json"));
        ASSERT_TRUE(src.pair && nbr.pair);
        EXPECT_EQ(src.pair->neighbour, std::string(stem) + "_nbr.json");
        EXPECT_EQ(nbr.pair->neighbour, std::string(stem) + "_src.json");
        const Mat4 loop = src.pair->to_neighbour.matrix() * nbr.pair->to_neighbour.matrix();
        EXPECT_LT((loop - Mat4::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(CliSynthGen, UnwritablePathIsUsageError) {
    const auto dir = test::scratch_dir("cli_synth_bad");
    io::write_file_atomic(dir / "file", "x");
    const auto r = invoke({"synth-gen", "--out", (dir / "file" / "sub").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());
}

TEST(CliGradcheck, PassesAndNamesInjectedFaults) {
    const auto ok = invoke({"gradcheck", "--trials", "2"});
    EXPECT_EQ(ok.code, 0) << ok.out;
    EXPECT_EQ(occurrences(ok.out, ",FAIL"), 0u);

    const auto bad = invoke({"gradcheck", "--trials", "2", "--inject-fault", "l_depth"});
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.out.find("l_depth"), std::string::npos);
    EXPECT_NE(bad.out.find("gradient check failed for: l_depth"), std::string::npos);
}

TEST(CliGradcheck, ZeroTrialsIsUsageError) {
    EXPECT_EQ(invoke({"gradcheck", "--trials", "0"}).code, 2);
}

TEST(CliWarpCheck, StandardPairPasses) {
    const auto dir = test::scratch_dir("cli_warp");
    ASSERT_EQ(small_pairs(dir).code, 0);
    const auto r = invoke({"warp-check", "--pair", (dir / "pair_0000_src.json").string()});
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.out.find("photo_mae"), std::string::npos);
    EXPECT_NE(r.out.find("oracle_lp"), std::string::npos);
    EXPECT_NE(r.out.find("\nok\n"), std::string::npos);
}

TEST(CliWarpCheck, IdentityPairHasZeroError) {
    const auto dir = test::scratch_dir("cli_warp_identity");
    ASSERT_EQ(small_pairs(dir, {"--baseline", "0,0,0", "--yaw", "0"}).code, 0);
    const auto r = invoke({"warp-check", "--pair", (dir / "pair_0001_src.json").string()});
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("identity_error 0\n"), std::string::npos);
    EXPECT_NE(r.out.find("coverage 1\n"), std::string::npos);
}

TEST(CliWarpCheck, NoOverlapWarnsButSucceeds) {
    const auto dir = test::scratch_dir("cli_warp_none");
    ASSERT_EQ(small_pairs(dir, {"--baseline", "0,0,0", "--yaw", "180"}).code, 0);
    const auto r = invoke({"warp-check", "--pair", (dir / "pair_0000_src.json").string()});
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.err.find("warning"), std::string::npos);
    EXPECT_EQ(r.out.find("photo_mae"), std::string::npos);
}

TEST(CliWarpCheck, MalformedManifestIsUsageError) {
    const auto dir = test::scratch_dir("cli_warp_bad");
    ASSERT_EQ(small_pairs(dir).code, 0);
    io::write_file_atomic(dir / "pair_0000_src.json", "{\"camera\": 3}");
    EXPECT_EQ(invoke({"warp-check", "--pair", (dir / "pair_0000_src.json").string()}).code, 2);
    EXPECT_EQ(invoke({"warp-check", "--pair", (dir / "absent.json").string()}).code, 2);
    EXPECT_EQ(invoke({"warp-check"}).code, 2);
}

TEST(CliTrainToy, ZeroStepsWritesInitialRow) {
    const auto dir = test::scratch_dir("cli_train");
    ASSERT_EQ(small_pairs(dir, {"--drop-prob", "0.5"}).code, 0);
    const auto report = dir / "loss.csv";
    const auto r = invoke({"train-toy", "--pairs", dir.string(), "--steps", "0", "--report", report.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(report);
    EXPECT_EQ(csv.rfind(io::loss_csv_header() + "\n0,", 0), 0u);
    EXPECT_EQ(occurrences(csv, "\n"), 2u);
    EXPECT_NE(r.out.find("pairs 2"), std::string::npos);
}

TEST(CliTrainToy, ShortRunIsDeterministic) {
    const auto dir = test::scratch_dir("cli_train_det");
    ASSERT_EQ(small_pairs(dir).code, 0);
    auto run = [&](const std::string& name) {
        const auto r = invoke({"train-toy", "--pairs", dir.string(), "--steps", "5", "--report", (dir / name).string(),
                            "--save-head", (dir / (name + ".head")).string()});
        EXPECT_EQ(r.code, 0) << r.err;
        return slurp(dir / name) + slurp(dir / (name + ".head"));
    };
    EXPECT_EQ(run("a.csv"), run("b.csv"));
}

TEST(CliTrainToy, EmptyDirectoryIsUsageError) {
    const auto dir = test::scratch_dir("cli_train_empty");
    const auto r = invoke({"train-toy", "--pairs", dir.string(), "--steps", "0"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("no *_src.json"), std::string::npos);
    EXPECT_EQ(invoke({"train-toy", "--pairs", dir.string(), "--guidance", "maybe"}).code, 2);
}

TEST(CliEval, GroundTruthAgainstItself) {
    const auto gt = test::scratch_dir("cli_eval_gt");
    ASSERT_EQ(invoke({"synth-gen", "--out", gt.string(), "--scenes", "3", "--width", "32", "--height", "24"}).code, 0);
    const auto out = test::scratch_dir("cli_eval_out");
    const auto r = invoke({"eval", "--pred", gt.string(), "--pred", gt.string(), "--gt", gt.string(), "--csv",
                        (out / "m.csv").string(), "--svg", (out / "r.svg").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(out / "m.csv");
    EXPECT_EQ(csv.rfind("model,image,abs_rel,sq_rel,rmse,log_rmse,delta1,delta2,delta3,ap,map\n", 0), 0u);
    // Two models, three images plus a mean row each.
    EXPECT_EQ(occurrences(csv, "\n"), 1u + 2 * 4);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
        EXPECT_TRUE(line.ends_with(",1,1,1,1,1")) << line;
    }
    EXPECT_EQ(occurrences(slurp(out / "r.svg"), "<polyline"), 2u);

    const auto again = invoke({"eval", "--pred", gt.string(), "--pred", gt.string(), "--gt", gt.string()});
    EXPECT_EQ(again.out, csv);
}

TEST(CliEval, MismatchedImageSetsAreUsageErrors) {
    const auto gt = test::scratch_dir("cli_eval_mis_gt");
    const auto pred = test::scratch_dir("cli_eval_mis_pred");
    ASSERT_EQ(invoke({"synth-gen", "--out", gt.string(), "--scenes", "2", "--width", "32", "--height", "24"}).code, 0);
    ASSERT_EQ(invoke({"synth-gen", "--out", pred.string(), "--scenes", "1", "--width", "32", "--height", "24"}).code,
              0);
    const auto r = invoke({"eval", "--pred", pred.string(), "--gt", gt.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("missing prediction"), std::string::npos);
}

TEST(CliRun, UnknownCommandIsUsageError) {
    EXPECT_EQ(invoke({"fly"}).code, 2);
    EXPECT_EQ(invoke({}).code, 2);
    EXPECT_EQ(invoke({"--help"}).code, 0);
}
