#pragma once

// File-level operations behind the command-line tool. Each returns a summary
// and throws the library's error types; mapping to exit codes happens in the
// tool itself.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hmat/checkpoint.hpp"
#include "hmat/decoder.hpp"
#include "hmat/image_io.hpp"
#include "hmat/mask.hpp"
#include "hmat/metrics.hpp"
#include "hmat/run_config.hpp"
#include "hmat/train.hpp"

namespace hmat::cmd {

namespace fs = std::filesystem;

/// Exit status of the command-line tool for a given failure.
enum class Exit : int { Ok = 0, Usage = 1, Data = 2, Invariant = 3 };

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot write '" + p.string() + "'");
    f << text;
}

// ------------------------------------------------------------------ mask-gen

struct MaskGenResult {
    std::vector<std::string> files;
    std::vector<double> coverages;
};

/// Mask i uses seed + i. Writes mask_NNNNN.png and manifest.csv.
inline MaskGenResult mask_gen(const fs::path& out, std::size_t count, const std::string& band_name, std::size_t h,
                              std::size_t w, std::uint64_t seed) {
    const auto band = band_from_name(band_name);
    ensure_dir(out);
    MaskGenResult r;
    std::ostringstream manifest;
    manifest << "filename,coverage,band\n";
    for (std::size_t i = 0; i < count; ++i) {
        const auto m = generate_brush_mask(h, w, band, seed + i);
        char name[32];
        std::snprintf(name, sizeof name, "mask_%05zu.png", i);
        io::write_mask_png((out / name).string(), m);
        manifest << name << ',' << format_double(m.coverage()) << ',' << band.name << '\n';
        r.files.emplace_back(name);
        r.coverages.push_back(m.coverage());
    }
    write_text(out / "manifest.csv", manifest.str());
    return r;
}

// ------------------------------------------------------------------ patchify

struct PatchifyResult {
    std::size_t rows = 0, cols = 0;
    std::vector<std::string> files;
};

/// Non-overlapping patch x patch crops in row-major order; right and bottom
/// remainders are dropped. Patch (i,j) covers rows [i*p, (i+1)*p), cols [j*p, (j+1)*p).
inline PatchifyResult patchify(const io::Image8& img, std::size_t patch, const fs::path& out) {
    if (patch == 0) throw ConfigError("patch size must be positive");
    ensure_dir(out);
    PatchifyResult r;
    r.rows = img.height / patch;
    r.cols = img.width / patch;
    std::ostringstream manifest;
    manifest << "filename,row,col,y,x\n";
    for (std::size_t i = 0; i < r.rows; ++i)
        for (std::size_t j = 0; j < r.cols; ++j) {
            io::Image8 p{patch, patch, img.channels, std::vector<std::uint8_t>(patch * patch * img.channels)};
            for (std::size_t y = 0; y < patch; ++y) {
                const auto* src = &img.pixels[((i * patch + y) * img.width + j * patch) * img.channels];
                std::copy_n(src, patch * img.channels, &p.pixels[y * patch * img.channels]);
            }
            char name[48];
            std::snprintf(name, sizeof name, "patch_r%03zu_c%03zu.png", i, j);
            io::write_png((out / name).string(), p);
            manifest << name << ',' << i << ',' << j << ',' << i * patch << ',' << j * patch << '\n';
            r.files.emplace_back(name);
        }
    write_text(out / "manifest.csv", manifest.str());
    return r;
}

// ------------------------------------------------------------------ infer

struct InferResult {
    std::size_t valid_pixels = 0;
    std::size_t changed_valid_bytes = 0;
};

inline Generator<float> load_generator(const fs::path& ckpt) {
    auto store = checkpoint::load(ckpt.string());
    auto cfg = checkpoint::infer_model_config(store);
    return Generator<float>(cfg, std::move(store));
}

/// Restores `image` under `mask` and writes the PNG. The byte-level fidelity
/// check compares every valid pixel of the written image with the input.
inline InferResult infer(const Generator<float>& gen, const io::Image8& image, const BinaryMask& mask,
                         std::uint64_t z_seed, const fs::path& out) {
    if (image.width != mask.width() || image.height != mask.height())
        throw DataError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                        " but mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()));
    const auto x = io::to_tensor<float>(image);
    const auto m = mask.to_tensor<float>();
    Rng rng(z_seed);
    const auto z = rng.normal_tensor<float>({1, gen.config().z_dim});
    Tensor<float> restored;
    {
        NoGradGuard ng;
        restored = gen.generate(x, m, z).restored;
    }
    const auto result = io::from_tensor(restored);
    InferResult r;
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (!mask.values()[p]) continue;
        ++r.valid_pixels;
        for (std::size_t c = 0; c < 3; ++c) r.changed_valid_bytes += result.pixels[p * 3 + c] != image.pixels[p * 3 + c];
    }
    if (r.changed_valid_bytes) throw InvariantViolation("valid pixels changed after 8-bit quantization");
    io::write_png(out.string(), result);
    return r;
}

// ------------------------------------------------------------------ eval

struct PairMetrics {
    std::string restored, reference, mask;
    metrics::MetricReport report;
};

struct EvalResult {
    std::vector<PairMetrics> pairs;
    metrics::MetricReport mean;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline nlohmann::json psnr_json(double v) { return std::isinf(v) ? nlohmann::json("inf") : nlohmann::json(v); }

/// Manifest: CSV with header "restored,reference[,mask]"; relative paths are
/// resolved against the manifest's directory.
inline EvalResult eval(const fs::path& manifest, const fs::path& out_json) {
    std::ifstream f(manifest);
    if (!f) throw DataError("cannot open pairs manifest '" + manifest.string() + "'");
    const auto base = manifest.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    std::string line;
    if (!std::getline(f, line)) throw DataError("pairs manifest is empty");
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "restored" || header[1] != "reference" ||
        (header.size() == 3 && header[2] != "mask") || header.size() > 3)
        throw DataError("pairs manifest header must be 'restored,reference[,mask]'");

    EvalResult r;
    while (std::getline(f, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) throw DataError("malformed manifest row: '" + line + "'");
        PairMetrics pm{cells[0], cells[1], header.size() == 3 ? cells[2] : "", {}};
        const auto a = io::to_tensor<double>(io::read_png(resolve(pm.restored).string(), 3));
        const auto b = io::to_tensor<double>(io::read_png(resolve(pm.reference).string(), 3));
        if (a.shape() != b.shape()) throw DataError("pair '" + pm.restored + "' / '" + pm.reference + "' differ in size");
        if (!pm.mask.empty()) {
            const auto m = io::read_mask_png(resolve(pm.mask).string()).to_tensor<double>();
            pm.report = metrics::evaluate(a, b, &m);
        } else {
            pm.report = metrics::evaluate(a, b);
        }
        r.pairs.push_back(std::move(pm));
    }

    nlohmann::json j;
    j["pairs"] = nlohmann::json::array();
    double sp = 0, ss = 0, sl = 0, slm = 0;
    std::size_t nlm = 0;
    for (const auto& p : r.pairs) {
        nlohmann::json e{{"restored", p.restored},
                         {"reference", p.reference},
                         {"psnr", psnr_json(p.report.psnr)},
                         {"ssim", p.report.ssim},
                         {"l1", p.report.l1},
                         {"fid", "n/a"}};
        if (!p.mask.empty()) {
            e["mask"] = p.mask;
            e["l1_missing"] = p.report.missing_empty ? nlohmann::json(nullptr) : nlohmann::json(p.report.l1_missing);
            e["missing_empty"] = p.report.missing_empty;
            if (!p.report.missing_empty) {
                slm += p.report.l1_missing;
                ++nlm;
            }
        }
        j["pairs"].push_back(e);
        sp += p.report.psnr;
        ss += p.report.ssim;
        sl += p.report.l1;
    }
    const double n = static_cast<double>(r.pairs.size());
    nlohmann::json agg{{"count", r.pairs.size()}, {"fid", "n/a"}};
    if (!r.pairs.empty()) {
        r.mean.psnr = sp / n;
        r.mean.ssim = ss / n;
        r.mean.l1 = sl / n;
        agg["psnr"] = psnr_json(r.mean.psnr);
        agg["ssim"] = r.mean.ssim;
        agg["l1"] = r.mean.l1;
    } else {
        agg["psnr"] = agg["ssim"] = agg["l1"] = nullptr;
    }
    if (nlm) {
        r.mean.l1_missing = slm / static_cast<double>(nlm);
        r.mean.missing_empty = false;
        agg["l1_missing"] = r.mean.l1_missing;
    }
    j["aggregate"] = agg;
    write_text(out_json, j.dump(2) + "\n");
    return r;
}

// ------------------------------------------------------------------ train

struct TrainRunResult {
    std::vector<double> losses;
    std::vector<fs::path> checkpoints;
};

inline std::vector<Tensor<float>> load_patch_dataset(const std::vector<std::string>& paths) {
    std::vector<fs::path> files;
    for (const auto& p : paths) {
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p))
                if (e.path().extension() == ".png") files.push_back(e.path());
        } else if (fs::exists(p)) {
            files.emplace_back(p);
        } else {
            throw DataError("dataset path '" + p + "' does not exist");
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Tensor<float>> out;
    for (const auto& f : files) {
        auto t = io::to_tensor<float>(io::read_png(f.string(), 3));
        out.push_back(ops::reshape(t, {3, t.dim(2), t.dim(3)}));
    }
    return out;
}

/// Writes step_NNNNNN.hmat at each interval, final.hmat and loss.csv.
inline TrainRunResult train(const RunConfig& rc, const fs::path& out) {
    std::vector<Tensor<float>> data;
    if (rc.data.synthetic) data = synthetic_patches(rc.data.synthetic->count, rc.data.synthetic->size, rc.data.synthetic->seed);
    auto more = load_patch_dataset(rc.data.paths);
    data.insert(data.end(), more.begin(), more.end());
    if (data.empty()) throw DataError("training dataset is empty");
    ensure_dir(out);

    Generator<float> gen(rc.model, rc.train.seed);
    TrainRunResult r;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](std::size_t step) {
        char name[32];
        if (step == rc.train.steps) std::snprintf(name, sizeof name, "final.hmat");
        else std::snprintf(name, sizeof name, "step_%06zu.hmat", step);
        checkpoint::save((out / name).string(), gen.params());
        r.checkpoints.push_back(out / name);
    };
    r.losses = hmat::train(gen, data, rc.train, hooks);
    std::ostringstream csv;
    csv << "step,loss\n";
    for (std::size_t i = 0; i < r.losses.size(); ++i) csv << i << ',' << format_double(r.losses[i]) << '\n';
    write_text(out / "loss.csv", csv.str());
    return r;
}

}  // namespace hmat::cmd
