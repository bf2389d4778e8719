#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "facesr/checkpoint.hpp"
#include "facesr/config.hpp"
#include "facesr/dataset.hpp"
#include "facesr/gradsuite.hpp"
#include "facesr/metrics.hpp"
#include "facesr/training.hpp"

using namespace facesr;

namespace {

enum Exit { kOk = 0, kFailure = 1, kBadConfig = 2, kDataError = 3, kNumericAbort = 4 };

FaceBasis load_basis(const std::string& path) {
    if (path.empty()) return generate_basis();
    return basis_from_checkpoint(load_checkpoint(path));
}

std::string hex_digest(const Checkpoint& c) { return checkpoint_digest(c); }

void print_kv(const std::string& key, const std::string& value) { std::cout << key << "=" << value << "\n"; }
void print_kv(const std::string& key, double value) {
    std::ostringstream s;
    s.precision(10);
    s << value;
    print_kv(key, s.str());
}

void print_epoch(const EpochRecord& r) {
    std::ostringstream s;
    s.precision(8);
    s << "epoch=" << r.epoch + 1 << " lr=" << r.lr << " loss=" << r.loss;
    if (std::isfinite(r.train_psnr)) s << " train_psnr=" << r.train_psnr;
    if (std::isfinite(r.val_psnr)) s << " val_psnr=" << r.val_psnr;
    std::cout << s.str() << std::endl;
}

void load_samples(const TrainConfig& cfg, const FaceBasis& basis, std::vector<FaceSample>& train,
                  std::vector<FaceSample>& val) {
    if (!cfg.data_dir.empty()) {
        DatasetSpec spec;
        spec.source = cfg.data_dir;
        spec.scale = cfg.scale;
        spec.seed = cfg.seed;
        split_samples(load_image_directory(spec), spec, train, val);
        return;
    }
    SyntheticFaceDataset ds(basis, Camera{}, SyntheticOptions{cfg.scale, cfg.noise_sigma, cfg.seed});
    train = ds.generate(0, static_cast<std::size_t>(cfg.train_samples));
    val = ds.generate(static_cast<std::size_t>(cfg.train_samples), static_cast<std::size_t>(cfg.val_samples));
}

SkinModel load_skin(const TrainConfig& cfg) {
    return cfg.skin_model_path.empty() ? SkinModel::shipped() : SkinModel::load(cfg.skin_model_path);
}

std::vector<float> read_coefficients(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open coefficient file " + path);
    std::vector<float> v;
    double x;
    while (in >> x) v.push_back(static_cast<float>(x));
    if (!in.eof()) throw DataError(path + ": non-numeric token");
    if (v.size() != kCoefficientDim) {
        throw DataError(path + ": expected " + std::to_string(kCoefficientDim) + " coefficients, got " +
                        std::to_string(v.size()));
    }
    return v;
}

void write_obj(const FaceBasis& basis, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "# mean face, " << basis.vertex_count << " vertices\n";
    for (std::size_t v = 0; v < basis.vertex_count; ++v) {
        out << "v " << basis.mean_shape[3 * v] << " " << basis.mean_shape[3 * v + 1] << " " << basis.mean_shape[3 * v + 2]
            << " " << basis.mean_texture[3 * v] << " " << basis.mean_texture[3 * v + 1] << " "
            << basis.mean_texture[3 * v + 2] << "\n";
    }
    for (const auto& t : basis.triangles) out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"3D-prior guided face super-resolution"};
    app.require_subcommand(1);

    std::string basis_path;

    auto* gen = app.add_subcommand("gen-basis", "Generate the synthetic morphable basis");
    std::string gen_out, gen_obj;
    std::uint64_t gen_seed = BasisOptions{}.seed;
    gen->add_option("--out", gen_out, "Basis archive path")->required();
    gen->add_option("--obj", gen_obj, "Also write the mean face as OBJ");
    gen->add_option("--seed", gen_seed, "Basis seed");

    auto* rnd = app.add_subcommand("render", "Render a face from coefficients");
    std::string rnd_out, rnd_lr_out, rnd_coeffs;
    std::uint64_t rnd_seed = 1;
    std::size_t rnd_index = 0;
    int rnd_scale = 8;
    rnd->add_option("--out", rnd_out, "Output PNG")->required();
    rnd->add_option("--lr-out", rnd_lr_out, "Also write the bicubic-degraded LR PNG");
    rnd->add_option("--scale", rnd_scale, "Degradation factor for --lr-out (4 or 8)");
    rnd->add_option("--coeffs", rnd_coeffs, "Text file with 239 coefficients");
    rnd->add_option("--seed", rnd_seed, "Synthetic coefficient seed (without --coeffs)");
    rnd->add_option("--index", rnd_index, "Synthetic sample index (without --coeffs)");
    rnd->add_option("--basis", basis_path, "Basis archive (default: generated)");

    auto* trr = app.add_subcommand("train-render", "Train the coefficient regressor");
    std::string trr_config, trr_out, trr_resume;
    trr->add_option("--config", trr_config, "Config file")->required();
    trr->add_option("--out", trr_out, "Checkpoint path")->required();
    trr->add_option("--resume", trr_resume, "Resume from checkpoint");
    trr->add_option("--basis", basis_path, "Basis archive (default: generated)");

    auto* trs = app.add_subcommand("train-sr", "Train the super-resolution branch");
    std::string trs_config, trs_out, trs_render, trs_resume;
    trs->add_option("--config", trs_config, "Config file")->required();
    trs->add_option("--render-checkpoint", trs_render, "Trained render-branch checkpoint")->required();
    trs->add_option("--out", trs_out, "Checkpoint path")->required();
    trs->add_option("--resume", trs_resume, "Resume from checkpoint");
    trs->add_option("--basis", basis_path, "Basis archive (default: generated)");

    auto* sr = app.add_subcommand("super-resolve", "Upscale one LR image to 128x128");
    std::string sr_in, sr_out, sr_ckpt;
    int sr_scale = 0;
    sr->add_option("--in", sr_in, "LR PNG")->required();
    sr->add_option("--out", sr_out, "Output PNG")->required();
    sr->add_option("--checkpoint", sr_ckpt, "SR checkpoint (default: bicubic)");
    sr->add_option("--scale", sr_scale, "4 or 8 (must match the checkpoint)");
    sr->add_option("--basis", basis_path, "Basis archive (default: generated)");

    auto* ev = app.add_subcommand("evaluate", "PSNR/SSIM of predictions against ground truth");
    std::string ev_pred, ev_gt, ev_ckpt, ev_ablation;
    int ev_scale = 0;
    ev->add_option("--pred", ev_pred, "Prediction directory")->required();
    ev->add_option("--gt", ev_gt, "Ground-truth directory")->required();
    ev->add_option("--scale", ev_scale, "Scale recorded in the report");
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint whose digest is recorded");
    ev->add_option("--ablation", ev_ablation, "Ablation label recorded in the report");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    std::size_t gc_seeds = 20;
    std::string gc_only;
    gc->add_option("--seeds", gc_seeds, "Random instances per case");
    gc->add_option("--only", gc_only, "Run cases whose name contains this text");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kBadConfig;
    }

    try {
        if (*gen) {
            BasisOptions opt;
            opt.seed = gen_seed;
            const FaceBasis basis = generate_basis(opt);
            const Checkpoint c = basis_to_checkpoint(basis);
            save_checkpoint(c, gen_out);
            if (!gen_obj.empty()) write_obj(basis, gen_obj);
            print_kv("vertices", std::to_string(basis.vertex_count));
            print_kv("triangles", std::to_string(basis.triangles.size()));
            print_kv("digest", hex_digest(c));
            print_kv("out", gen_out);
        } else if (*rnd) {
            const FaceBasis basis = load_basis(basis_path);
            const std::vector<float> coeffs =
                rnd_coeffs.empty() ? sample_coefficients(rnd_seed, rnd_index) : read_coefficients(rnd_coeffs);
            const auto out = render(basis, FaceCoefficients<float>(std::span<const float>(coeffs)), Camera{});
            Image img(out.width, out.height, 3);
            for (int y = 0; y < out.height; ++y)
                for (int x = 0; x < out.width; ++x)
                    for (int c = 0; c < 3; ++c) img.at(c, y, x) = out.rgb[3 * (y * out.width + x) + c];
            const Image hr = clamp01(img);
            save_png(hr, rnd_out);
            if (!rnd_lr_out.empty()) {
                if (rnd_scale != 4 && rnd_scale != 8) throw ConfigError("--scale must be 4 or 8");
                save_png(clamp01(degrade(hr, rnd_scale)), rnd_lr_out);
                print_kv("lr_out", rnd_lr_out);
            }
            print_kv("width", std::to_string(out.width));
            print_kv("height", std::to_string(out.height));
            print_kv("covered_pixels", std::to_string(out.covered_pixels()));
            print_kv("out", rnd_out);
        } else if (*trr) {
            const TrainConfig cfg = TrainConfig::load(trr_config);
            const FaceBasis basis = load_basis(basis_path);
            std::vector<FaceSample> train, val;
            load_samples(cfg, basis, train, val);
            RenderTrainer trainer(cfg, basis, Camera{}, load_skin(cfg), std::move(train));
            if (!trr_resume.empty()) trainer.resume(load_checkpoint(trr_resume));
            try {
                trainer.train(print_epoch);
            } catch (const TrainingAborted& e) {
                save_checkpoint(e.last_good, trr_out);
                print_kv("aborted_epoch", std::to_string(e.epoch + 1));
                print_kv("checkpoint", trr_out);
                throw;
            }
            const Checkpoint c = trainer.checkpoint();
            save_checkpoint(c, trr_out);
            print_kv("checkpoint", trr_out);
            print_kv("digest", hex_digest(c));
        } else if (*trs) {
            const TrainConfig cfg = TrainConfig::load(trs_config);
            const FaceBasis basis = load_basis(basis_path);
            std::vector<FaceSample> train, val;
            load_samples(cfg, basis, train, val);
            SrTrainer trainer(cfg, basis, Camera{}, load_checkpoint(trs_render), std::move(train), std::move(val));
            if (!trs_resume.empty()) trainer.resume(load_checkpoint(trs_resume));
            try {
                trainer.train(print_epoch);
            } catch (const TrainingAborted& e) {
                save_checkpoint(e.last_good, trs_out);
                print_kv("aborted_epoch", std::to_string(e.epoch + 1));
                print_kv("checkpoint", trs_out);
                throw;
            }
            const Checkpoint c = trainer.checkpoint();
            save_checkpoint(c, trs_out);
            print_kv("checkpoint", trs_out);
            print_kv("digest", hex_digest(c));
            print_kv("val_psnr", trainer.validation_psnr());
        } else if (*sr) {
            const Image lr = load_png(sr_in);
            Image out;
            std::string method = "bicubic";
            int scale = sr_scale;
            if (!sr_ckpt.empty()) {
                const FaceBasis basis = load_basis(basis_path);
                const SuperResolver model(load_checkpoint(sr_ckpt), basis, Camera{});
                if (scale != 0 && scale != model.scale()) {
                    throw ConfigError("--scale " + std::to_string(scale) + " does not match the checkpoint scale " +
                                      std::to_string(model.scale()));
                }
                scale = model.scale();
                out = model.run(lr);
                method = "sam";
            } else {
                if (scale != 4 && scale != 8) throw ConfigError("--scale must be 4 or 8 without a checkpoint");
                if (lr.width * scale != 128 || lr.height * scale != 128) {
                    throw DataError("input must be " + std::to_string(128 / scale) + "x" + std::to_string(128 / scale) +
                                    " for scale " + std::to_string(scale));
                }
                out = clamp01(resize_bicubic(lr, 128, 128));
            }
            save_png(out, sr_out);
            print_kv("method", method);
            print_kv("scale", std::to_string(scale));
            print_kv("width", std::to_string(out.width));
            print_kv("height", std::to_string(out.height));
            print_kv("out", sr_out);
        } else if (*ev) {
            MetricReport report = evaluate_directories(ev_pred, ev_gt);
            report.scale = ev_scale;
            report.ablation = ev_ablation;
            if (!ev_ckpt.empty()) report.checkpoint_hash = hex_digest(load_checkpoint(ev_ckpt));
            std::cout << report.to_text();
        } else if (*gc) {
            GradSuiteOptions opt;
            opt.seeds = gc_seeds;
            opt.only = gc_only;
            const auto report = run_gradient_suite(opt, [](const GradSuiteCase& c) {
                std::ostringstream s;
                s.precision(4);
                s << "case=" << c.name << " seeds=" << c.seeds << " coords=" << c.coords
                  << " max_rel_error=" << c.max_rel_error << " tolerance=" << c.tolerance << " step=" << c.step
                  << " seconds=" << c.seconds << " status=" << (c.passed() ? "pass" : "fail");
                if (!c.passed()) s << " worst=\"" << c.worst << "\"";
                std::cout << s.str() << std::endl;
            });
            if (report.cases.empty()) throw ConfigError("no gradient case matches '" + gc_only + "'");
            print_kv("max_rel_error", report.max_rel_error());
            print_kv("max_rel_error_end_to_end", report.max_rel_error_end_to_end());
            print_kv("seconds", report.seconds);
            print_kv("status", report.passed() ? "pass" : "fail");
            return report.passed() ? kOk : kFailure;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kBadConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kNumericAbort;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const ImageIoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const CheckpointError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const DimensionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kOk;
}
