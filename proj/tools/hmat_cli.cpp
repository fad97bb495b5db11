// Command-line front end: mask-gen, patchify, infer, train, eval, gradcheck, selftest.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <regex>
#include <string>

#include "CLI11.hpp"
#include "hmat/hmat.hpp"

namespace {

using hmat::cmd::Exit;

int code(Exit e) { return static_cast<int>(e); }

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
    static const std::regex re(R"((\d+)[xX](\d+))");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw hmat::ConfigError("--size must look like HxW, got '" + s + "'");
    return {std::stoul(m[1]), std::stoul(m[2])};
}

int run_gradcheck(const std::string& module) {
    const auto start = std::chrono::steady_clock::now();
    std::size_t ran = 0, failed = 0;
    for (const auto& c : hmat::gradcheck_suite()) {
        if (!module.empty() && c.module != module) continue;
        ++ran;
        const auto r = c.run();
        failed += !r.passed;
        std::printf("%s %-20s %-32s max_err=%.3e checked=%zu refined=%zu%s%s\n", r.passed ? "PASS" : "FAIL",
                    c.module.c_str(), c.name.c_str(), r.max_error, r.checked, r.refined, r.passed ? "" : " worst=",
                    r.passed ? "" : r.worst.c_str());
    }
    if (ran == 0) {
        std::fprintf(stderr, "error: no gradcheck cases for module '%s'\n", module.c_str());
        return code(Exit::Usage);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%zu/%zu passed in %.1f s\n", ran - failed, ran, secs);
    return failed ? code(Exit::Invariant) : code(Exit::Ok);
}

int run_selftest() {
    std::size_t failed = 0, total = 0;
    for (const auto& t : hmat::selftest_table()) {
        ++total;
        try {
            t.run();
            std::printf("PASS %-20s %s\n", t.module.c_str(), t.name.c_str());
        } catch (const std::exception& e) {
            ++failed;
            std::printf("FAIL %-20s %s: %s\n", t.module.c_str(), t.name.c_str(), e.what());
        }
    }
    std::printf("%zu/%zu passed\n", total - failed, total);
    return failed ? code(Exit::Invariant) : code(Exit::Ok);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mask-aware mural restoration toolkit"};
    app.require_subcommand(1);

    std::string out, band = "moderate", size = "256x256";
    std::size_t count = 1;
    std::uint64_t seed = 0;
    auto* mask_gen = app.add_subcommand("mask-gen", "Generate free-form brush masks in a coverage band");
    mask_gen->add_option("--out", out, "Output directory")->required();
    mask_gen->add_option("--count", count, "Number of masks");
    mask_gen->add_option("--band", band, "moderate | severe");
    mask_gen->add_option("--size", size, "Mask size HxW");
    mask_gen->add_option("--seed", seed, "Seed of the first mask; mask i uses seed + i");

    std::string in;
    std::size_t patch = 256;
    auto* patchify = app.add_subcommand("patchify", "Cut an image into non-overlapping square patches");
    patchify->add_option("--in", in, "Input PNG")->required();
    patchify->add_option("--out", out, "Output directory")->required();
    patchify->add_option("--patch", patch, "Patch side in pixels");

    std::string ckpt, image, mask, refine = "none";
    std::uint64_t z_seed = 0;
    auto* infer = app.add_subcommand("infer", "Restore the missing region of one image");
    infer->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    infer->add_option("--image", image, "Degraded image PNG")->required();
    infer->add_option("--mask", mask, "Mask PNG (white = valid, black = missing)")->required();
    infer->add_option("--z-seed", z_seed, "Seed of the latent code");
    infer->add_option("--out", out, "Output PNG")->required();
    infer->add_option("--refine", refine, "Refinement stage")->check(CLI::IsMember({"none"}));

    std::string config;
    auto* train = app.add_subcommand("train", "Train a generator with the L1 objective");
    train->add_option("--config", config, "JSON run configuration")->required();
    train->add_option("--out", out, "Output directory")->required();

    std::string pairs;
    auto* eval = app.add_subcommand("eval", "Score restored images against references");
    eval->add_option("--pairs", pairs, "CSV manifest: restored,reference[,mask]")->required();
    eval->add_option("--out", out, "Report JSON")->required();

    std::string module;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
    gradcheck->add_option("--module", module, "Restrict to one module");

    auto* selftest = app.add_subcommand("selftest", "Run the table of closed-form examples");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : code(Exit::Usage);
    }

    try {
        if (*mask_gen) {
            const auto [h, w] = parse_size(size);
            const auto r = hmat::cmd::mask_gen(out, count, band, h, w, seed);
            std::printf("wrote %zu masks to %s\n", r.files.size(), out.c_str());
        } else if (*patchify) {
            const auto r = hmat::cmd::patchify(hmat::io::read_png(in, 3), patch, out);
            if (r.files.empty())
                std::fprintf(stderr, "warning: image is smaller than one %zux%zu patch; no patches written\n", patch,
                             patch);
            std::printf("wrote %zu patches (%zu rows x %zu cols) to %s\n", r.files.size(), r.rows, r.cols, out.c_str());
        } else if (*infer) {
            const auto gen = hmat::cmd::load_generator(ckpt);
            const auto r = hmat::cmd::infer(gen, hmat::io::read_png(image, 3), hmat::io::read_mask_png(mask), z_seed, out);
            std::printf("fidelity: %zu valid pixels byte-identical to input, %zu changed\n", r.valid_pixels,
                        r.changed_valid_bytes);
        } else if (*train) {
            const auto rc = hmat::load_run_config(config);
            const auto r = hmat::cmd::train(rc, out);
            if (!r.losses.empty())
                std::printf("trained %zu steps: loss %.6f -> %.6f\n", r.losses.size(), r.losses.front(), r.losses.back());
            std::printf("wrote %zu checkpoints to %s\n", r.checkpoints.size(), out.c_str());
        } else if (*eval) {
            const auto r = hmat::cmd::eval(pairs, out);
            std::printf("scored %zu pairs: psnr %s ssim %.6f l1 %.6f\n", r.pairs.size(),
                        hmat::cmd::format_double(r.mean.psnr).c_str(), r.mean.ssim, r.mean.l1);
        } else if (*gradcheck) {
            return run_gradcheck(module);
        } else if (*selftest) {
            return run_selftest();
        }
    } catch (const hmat::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return code(Exit::Usage);
    } catch (const hmat::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return code(Exit::Data);
    } catch (const hmat::ShapeError& e) {
        std::fprintf(stderr, "shape error: %s\n", e.what());
        return code(Exit::Data);
    } catch (const hmat::InvariantViolation& e) {
        std::fprintf(stderr, "invariant violated: %s\n", e.what());
        return code(Exit::Invariant);
    } catch (const hmat::NonFiniteError& e) {
        std::fprintf(stderr, "non-finite value: %s\n", e.what());
        return code(Exit::Invariant);
    } catch (const hmat::GraphError& e) {
        std::fprintf(stderr, "graph error: %s\n", e.what());
        return code(Exit::Invariant);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return code(Exit::Data);
    }
    return code(Exit::Ok);
}
