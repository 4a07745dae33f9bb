// SPDX-License-Identifier: Apache-2.0
// Command-line front end: data preparation, two-stage training, inference,
// evaluation and diagnostics.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "treesr/checkpoint.hpp"
#include "treesr/config.hpp"
#include "treesr/data.hpp"
#include "treesr/error.hpp"
#include "treesr/evaluation.hpp"
#include "treesr/loss.hpp"
#include "treesr/model.hpp"
#include "treesr/synthetic.hpp"
#include "treesr/training.hpp"

namespace fs = std::filesystem;
using namespace treesr;

namespace {

// Seed streams split off run.seed for the two networks.
constexpr std::uint64_t kDivergenceSeedStream = 101;
constexpr std::uint64_t kConvergenceSeedStream = 202;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

RunConfig resolve_config(const fs::path& path, const std::vector<std::string>& overrides) {
    RunConfig cfg = load_run_config(path);
    apply_overrides(cfg, overrides);
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

DivergenceModel fresh_divergence(const RunConfig& cfg) {
    return DivergenceModel(cfg.model, derive_seed(cfg.seed, kDivergenceSeedStream));
}

struct Pipeline {
    DivergenceModel div;
    ConvergenceModel conv;
};

// Loads a matching divergence/convergence checkpoint pair.
Pipeline load_pipeline(const fs::path& div_path, const fs::path& conv_path) {
    const Checkpoint dk = load_checkpoint(div_path);
    const Checkpoint ck = load_checkpoint(conv_path);
    if (dk.kind != ModelKind::Divergence) throw CheckpointError(div_path.string() + ": not a divergence checkpoint");
    if (ck.kind != ModelKind::Convergence) throw CheckpointError(conv_path.string() + ": not a convergence checkpoint");
    if (dk.model.hash() != ck.model.hash()) {
        throw CheckpointError("config hash mismatch: divergence checkpoint " + hex_hash(dk.model.hash()) +
                              ", convergence checkpoint " + hex_hash(ck.model.hash()));
    }
    Pipeline p{divergence_from_checkpoint(dk), convergence_from_checkpoint(ck)};
    const std::uint64_t h = p.div.parameters().hash();
    if (ck.linked_hash != h) {
        throw CheckpointError("convergence checkpoint was trained on divergence parameters " + hex_hash(ck.linked_hash) +
                              ", divergence checkpoint holds " + hex_hash(h));
    }
    return p;
}

void write_branches(const PredictionSet& preds, const fs::path& dir, const std::string& prefix = "") {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        save_png(preds.predictions[i].clamped(), dir / (prefix + "branch_" + leaf_path_name(preds.leaf_paths[i]) + ".png"));
    }
}

// First usable pair of the test split (or the training split) for the
// run's preview images.
std::optional<ImagePair> preview_pair(const RunConfig& cfg) {
    for (const fs::path& m : {cfg.test_manifest, cfg.train_manifest}) {
        if (m.empty()) continue;
        std::optional<ImagePair> found;
        iterate_pairs(load_manifest(m), [&](ImagePair&& p) {
            if (!found && p.lr.height() >= kMinInputSide && p.lr.width() >= kMinInputSide) found = std::move(p);
        });
        if (found) return found;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    fs::path out;
    int count = 8;
    int size = 96;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
    const auto files = synthesize_corpus(a.out, a.count, a.size, a.size, a.seed);
    std::cout << "wrote " << files.size() << " images to " << a.out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- prepare-data

struct PrepareArgs {
    fs::path hr_dir, out;
    int scale = 4;
    int test_every = 0;
};

int cmd_prepare(const PrepareArgs& a) {
    const GeneratedDataset g = generate_bicubic_pairs(a.hr_dir, a.scale, a.out, a.test_every);
    std::cout << "train: " << g.train.entries.size() << " pairs -> " << (a.out / "train.manifest").string() << "\n";
    if (g.test) std::cout << "test: " << g.test->entries.size() << " pairs -> " << (a.out / "test.manifest").string() << "\n";
    for (const auto* m : {&g.train, g.test ? &*g.test : nullptr}) {
        if (!m) continue;
        for (const std::string& w : m->warnings) std::cerr << "warning: " << w << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    fs::path config;
    std::string stage;
    fs::path resume;
    fs::path divergence_ckpt;
    std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = resolve_config(a.config, a.overrides);
    if (a.stage == "divergence") {
        cfg.train.stage = Stage::Divergence;
    } else if (a.stage == "convergence") {
        cfg.train.stage = Stage::Convergence;
        if (a.divergence_ckpt.empty()) throw ConfigError("--stage convergence requires --divergence-ckpt");
    } else {
        throw ConfigError("--stage must be divergence or convergence, got '" + a.stage + "'");
    }
    if (cfg.train_manifest.empty()) throw ConfigError("data.train_manifest is not set");

    const fs::path run_dir = cfg.run_dir();
    if (a.resume.empty() && fs::exists(run_dir / "metrics.csv")) {
        throw ConfigError(run_dir.string() + " already holds a run; pick another run.name or pass --resume");
    }
    fs::create_directories(run_dir);
    {
        std::ofstream echo(run_dir / "config.echo");
        echo << "# stage = " << a.stage << "\n" << echo_run_config(cfg);
        if (!echo) throw IoError((run_dir / "config.echo").string() + ": write failed");
    }

    const DatasetManifest train = load_manifest(cfg.train_manifest);
    if (train.scale != cfg.model.scale) {
        throw ConfigError("manifest scale " + std::to_string(train.scale) + " differs from model.scale " +
                          std::to_string(cfg.model.scale));
    }
    std::optional<Checkpoint> resume;
    if (!a.resume.empty()) resume = load_checkpoint(a.resume, &cfg.model);

    const auto preview = preview_pair(cfg);
    if (cfg.train.stage == Stage::Divergence) {
        DivergenceModel model = resume ? divergence_from_checkpoint(*resume) : fresh_divergence(cfg);
        const TrainResult r = train_divergence(model, train, cfg.train, run_dir, resume ? &*resume : nullptr);
        if (preview) write_branches(divergence_forward(model, preview->lr), run_dir / "images");
        std::cout << "steps " << r.final.state.step << ", final checkpoint " << r.final_path.string() << "\n";
    } else {
        const Checkpoint div_ckpt = load_checkpoint(a.divergence_ckpt, &cfg.model);
        if (div_ckpt.kind != ModelKind::Divergence) {
            throw CheckpointError(a.divergence_ckpt.string() + ": not a divergence checkpoint");
        }
        ConvergenceModel model = resume ? convergence_from_checkpoint(*resume)
                                        : ConvergenceModel(cfg.model, derive_seed(cfg.seed, kConvergenceSeedStream));
        const TrainResult r =
            train_convergence(div_ckpt, model, train, cfg.train, run_dir, resume ? &*resume : nullptr);
        if (preview) {
            const DivergenceModel div = divergence_from_checkpoint(div_ckpt);
            PredictionSet branches;
            WeightMaps weights;
            const Image sr = super_resolve(div, model, preview->lr, &branches, &weights);
            fs::create_directories(run_dir / "images");
            save_png(sr, run_dir / "images" / "sr.png");
            export_weight_heatmaps(weights, branches.leaf_paths, run_dir / "images");
        }
        std::cout << "steps " << r.final.state.step << ", final checkpoint " << r.final_path.string() << "\n"
                  << "divergence parameters " << hex_hash(r.frozen_hash_before) << " -> "
                  << hex_hash(r.frozen_hash_after) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
    fs::path ckpt_div, ckpt_conv, input, out;
    fs::path dump_branches, dump_weights;
};

int cmd_infer(const InferArgs& a) {
    const Pipeline p = load_pipeline(a.ckpt_div, a.ckpt_conv);
    const Image lr = load_png(a.input);
    PredictionSet branches;
    WeightMaps weights;
    const Image sr = super_resolve(p.div, p.conv, lr, &branches, &weights);
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    save_png(sr, a.out);
    if (!a.dump_branches.empty()) write_branches(branches, a.dump_branches);
    if (!a.dump_weights.empty()) export_weight_heatmaps(weights, branches.leaf_paths, a.dump_weights);
    std::cout << lr.height() << "x" << lr.width() << " -> " << sr.height() << "x" << sr.width() << " "
              << a.out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    fs::path ckpt_div, ckpt_conv, manifest, out;
    int border = -1;
    bool identity = false;
};

int cmd_eval(const EvalArgs& a) {
    if (!a.identity && (a.ckpt_div.empty() || a.ckpt_conv.empty())) {
        throw ConfigError("eval needs --ckpt-div and --ckpt-conv (or --identity)");
    }
    const DatasetManifest m = load_manifest(a.manifest);
    if (m.entries.empty()) throw Error(a.manifest.string() + ": split is empty");
    std::optional<Pipeline> p;
    if (!a.identity) p = load_pipeline(a.ckpt_div, a.ckpt_conv);
    if (p && p->div.config().scale != m.scale) {
        throw ConfigError("manifest scale " + std::to_string(m.scale) + " differs from the model's " +
                          std::to_string(p->div.config().scale));
    }

    EvalReport report;
    report.border = a.border >= 0 ? a.border : m.scale;
    report.scale = m.scale;
    double divergence_sum = 0.0;
    const auto rejected = iterate_pairs(m, [&](ImagePair&& pair) {
        try {
            Image sr = pair.hr;
            if (p) {
                PredictionSet branches;
                sr = super_resolve(p->div, p->conv, pair.lr, &branches);
                divergence_sum += mean_pairwise_divergence(branches);
            }
            EvalRecord r{pair.identifier, psnr_y(sr, pair.hr, report.border), ssim_y(sr, pair.hr, report.border)};
            report.records.push_back(r);
        } catch (const ShapeError& e) {
            report.skipped.emplace_back(pair.identifier, e.what());
        } catch (const ConfigError& e) {
            report.skipped.emplace_back(pair.identifier, e.what());
        }
    });
    for (const PairRejection& r : rejected) report.skipped.emplace_back(r.identifier, r.reason);
    report.finalize();
    if (!report.records.empty()) report.mean_divergence = divergence_sum / static_cast<double>(report.records.size());
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    write_report_csv(report, a.out);
    for (const auto& [id, why] : report.skipped) std::cerr << "skipped " << id << ": " << why << "\n";
    std::cout << "n=" << report.records.size() << " psnr_y=" << fmt(report.mean_psnr)
              << " ssim_y=" << fmt(report.mean_ssim) << " branch_divergence=" << fmt(report.mean_divergence)
              << "\n";
    return 0;
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseArgs {
    fs::path ckpt_div, manifest, config, out = "diagnose";
    std::string sweep;
    std::vector<std::string> overrides;
};

struct BranchStats {
    double divergence = 0.0;
    double checkerboard = 0.0;
    double best_psnr = 0.0;
    double mean_psnr = 0.0;
    int images = 0;
};

// Runs the divergence network over a manifest and accumulates per-image
// statistics. With `detail_dir` set, also writes the divergence matrix,
// per-branch checkerboard energies and images for the first pair.
BranchStats analyze(const DivergenceModel& model, const DatasetManifest& m, const fs::path& detail_dir = {}) {
    BranchStats s;
    const int p = model.config().num_predictions();
    std::vector<std::vector<double>> matrix(p, std::vector<double>(p, 0.0));
    std::ofstream cb;
    if (!detail_dir.empty()) {
        fs::create_directories(detail_dir);
        cb.open(detail_dir / "checkerboard.csv");
        cb << "identifier,branch,checkerboard_energy\n";
    }
    iterate_pairs(m, [&](ImagePair&& pair) {
        if (pair.lr.height() < kMinInputSide || pair.lr.width() < kMinInputSide) return;
        const PredictionSet preds = divergence_forward(model, pair.lr);
        const auto d = pairwise_divergence(preds);
        double best = -1e300, mean = 0.0, energy = 0.0;
        for (int i = 0; i < p; ++i) {
            for (int j = 0; j < p; ++j) matrix[i][j] += d[i][j];
            const Image clamped = preds.predictions[i].clamped();
            const double e = checkerboard_energy(preds.predictions[i]);
            const double q = psnr_y(clamped, pair.hr, m.scale);
            energy += e / p;
            mean += q / p;
            best = std::max(best, q);
            if (cb.is_open()) cb << pair.identifier << "," << leaf_path_name(preds.leaf_paths[i]) << "," << fmt(e) << "\n";
        }
        if (!detail_dir.empty() && s.images == 0) {
            write_branches(preds, detail_dir / "images", pair.identifier + "_");
            LossConfig lc;
            for (int i = 0; i < p; ++i) {
                save_png(heatmap(residual_map(preds.predictions[i], pair.hr, lc)),
                         detail_dir / "images" /
                             (pair.identifier + "_residual_" + leaf_path_name(preds.leaf_paths[i]) + ".png"));
            }
        }
        s.divergence += mean_pairwise_divergence(preds);
        s.checkerboard += energy;
        s.best_psnr += best;
        s.mean_psnr += mean;
        ++s.images;
    });
    if (s.images == 0) throw Error("no usable pairs in the diagnostic manifest");
    s.divergence /= s.images;
    s.checkerboard /= s.images;
    s.best_psnr /= s.images;
    s.mean_psnr /= s.images;
    if (!detail_dir.empty()) {
        std::ofstream out(detail_dir / "divergence.csv");
        out << "branch";
        for (int j = 0; j < p; ++j) out << "," << leaf_path_name(model.leaf_paths()[j]);
        out << "\n";
        for (int i = 0; i < p; ++i) {
            out << leaf_path_name(model.leaf_paths()[i]);
            for (int j = 0; j < p; ++j) out << "," << fmt(matrix[i][j] / s.images);
            out << "\n";
        }
    }
    return s;
}

struct SweepPoint {
    std::string label;
    std::vector<std::string> overrides;
};

std::vector<SweepPoint> parse_sweep(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--sweep expects name=v1,v2,..., got '" + spec + "'");
    const std::string name = spec.substr(0, eq);
    std::vector<std::string> values;
    std::stringstream ss(spec.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');)
        if (!v.empty()) values.push_back(v);
    if (values.empty()) throw ConfigError("--sweep " + name + ": no values");

    std::vector<SweepPoint> points;
    if (name == "alpha") {
        for (const auto& v : values) points.push_back({"alpha=" + v, {"loss.alpha=" + v}});
    } else if (name == "abs") {
        for (const auto& v : values) {
            if (v != "on" && v != "off") throw ConfigError("--sweep abs: values are on/off, got '" + v + "'");
            points.push_back({"abs=" + v, {std::string("loss.use_abs=") + (v == "on" ? "true" : "false")}});
        }
    } else if (name == "tree") {
        std::vector<std::pair<int, int>> shapes;
        if (values.size() == 1 && values[0] == "grid") {
            for (int l = 1; l <= 4; ++l)
                for (int c = 1; c <= 4; ++c) shapes.emplace_back(l, c);
        } else {
            for (const auto& v : values) {
                int l = 0, c = 0;
                char x = 0;
                std::istringstream is(v);
                if (!(is >> l >> x >> c) || x != 'x' || !is.eof()) {
                    throw ConfigError("--sweep tree: expected LxC or grid, got '" + v + "'");
                }
                shapes.emplace_back(l, c);
            }
        }
        for (auto [l, c] : shapes) {
            points.push_back({"tree=" + std::to_string(l) + "x" + std::to_string(c),
                              {"model.tree_depth=" + std::to_string(l), "model.branching=" + std::to_string(c)}});
        }
    } else {
        throw ConfigError("--sweep: unknown sweep '" + name + "' (alpha, abs, tree)");
    }
    return points;
}

int cmd_diagnose(const DiagnoseArgs& a) {
    const DatasetManifest m = load_manifest(a.manifest);
    fs::create_directories(a.out);
    if (a.sweep.empty()) {
        if (a.ckpt_div.empty()) throw ConfigError("diagnose needs --ckpt-div (or --sweep with --config)");
        const Checkpoint ck = load_checkpoint(a.ckpt_div);
        if (ck.kind != ModelKind::Divergence) throw CheckpointError(a.ckpt_div.string() + ": not a divergence checkpoint");
        const BranchStats s = analyze(divergence_from_checkpoint(ck), m, a.out);
        std::cout << "images=" << s.images << " mean_divergence=" << fmt(s.divergence)
                  << " mean_checkerboard=" << fmt(s.checkerboard) << "\n";
        return 0;
    }
    if (a.config.empty()) throw ConfigError("--sweep needs --config for the training settings");
    const auto points = parse_sweep(a.sweep);
    // Validate every point before spending time on training.
    std::vector<RunConfig> configs;
    for (const SweepPoint& pt : points) {
        std::vector<std::string> ov = a.overrides;
        ov.insert(ov.end(), pt.overrides.begin(), pt.overrides.end());
        RunConfig cfg = resolve_config(a.config, ov);
        cfg.train.stage = Stage::Divergence;
        if (cfg.train_manifest.empty()) throw ConfigError("data.train_manifest is not set");
        configs.push_back(cfg);
    }
    std::ofstream csv(a.out / "sweep.csv");
    csv << "point,tree_depth,branching,use_abs,alpha,parameters,steps,mean_divergence,mean_checkerboard,"
           "mean_branch_psnr,best_branch_psnr\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        const RunConfig& cfg = configs[i];
        std::string dir_name = points[i].label;
        std::replace(dir_name.begin(), dir_name.end(), '=', '_');
        DivergenceModel model = fresh_divergence(cfg);
        const TrainResult r = train_divergence(model, load_manifest(cfg.train_manifest), cfg.train, a.out / dir_name);
        const BranchStats s = analyze(model, m);
        csv << points[i].label << "," << cfg.model.tree_depth << "," << cfg.model.branching << ","
            << (cfg.train.loss.use_abs ? "true" : "false") << "," << fmt(cfg.train.loss.alpha) << ","
            << count_parameters(model) << "," << r.final.state.step << "," << fmt(s.divergence) << ","
            << fmt(s.checkerboard) << "," << fmt(s.mean_psnr) << "," << fmt(s.best_psnr) << "\n";
        csv.flush();
        std::cout << points[i].label << ": divergence " << fmt(s.divergence) << ", checkerboard "
                  << fmt(s.checkerboard) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tree-structured divergence/convergence super-resolution"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a procedural HR image corpus");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--count", synth.count, "Number of images")->check(CLI::PositiveNumber);
    s->add_option("--size", synth.size, "Side length in pixels")->check(CLI::PositiveNumber);
    s->add_option("--seed", synth.seed, "Generator seed");

    PrepareArgs prep;
    auto* p = app.add_subcommand("prepare-data", "Build bicubic LR/HR pairs and manifests");
    p->add_option("--hr-dir", prep.hr_dir, "Directory of HR PNGs")->required();
    p->add_option("--scale", prep.scale, "Scale factor (2, 3, 4, 8)")->required();
    p->add_option("--out", prep.out, "Output directory")->required();
    p->add_option("--test-every", prep.test_every, "Send every k-th image to the test split")
        ->check(CLI::NonNegativeNumber);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Run one training stage");
    t->add_option("--config", train.config, "Run configuration file")->required();
    t->add_option("--stage", train.stage, "divergence or convergence")->required();
    t->add_option("--resume", train.resume, "Continue from a checkpoint of this stage");
    t->add_option("--divergence-ckpt", train.divergence_ckpt, "Frozen stage-1 checkpoint (stage convergence)");
    t->add_option("--set", train.overrides, "Override a config key (key=value), repeatable");

    InferArgs infer;
    auto* i = app.add_subcommand("infer", "Super-resolve one image");
    i->add_option("--ckpt-div", infer.ckpt_div, "Divergence checkpoint")->required();
    i->add_option("--ckpt-conv", infer.ckpt_conv, "Convergence checkpoint")->required();
    i->add_option("--input", infer.input, "LR PNG")->required();
    i->add_option("--out", infer.out, "Output PNG")->required();
    i->add_option("--dump-branches", infer.dump_branches, "Directory for the per-branch predictions");
    i->add_option("--dump-weights", infer.dump_weights, "Directory for the fusion weight heatmaps");

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Y-channel PSNR/SSIM over a manifest");
    e->add_option("--ckpt-div", eval.ckpt_div, "Divergence checkpoint");
    e->add_option("--ckpt-conv", eval.ckpt_conv, "Convergence checkpoint");
    e->add_option("--manifest", eval.manifest, "Evaluation manifest")->required();
    e->add_option("--border", eval.border, "Pixels cropped per side (default: scale)")->check(CLI::NonNegativeNumber);
    e->add_flag("--identity", eval.identity, "Score HR against itself (metric sanity check)");
    e->add_option("--out", eval.out, "Report CSV")->required();

    DiagnoseArgs diag;
    auto* d = app.add_subcommand("diagnose", "Branch divergence, checkerboard energy and ablation sweeps");
    d->add_option("--ckpt-div", diag.ckpt_div, "Divergence checkpoint to analyze");
    d->add_option("--manifest", diag.manifest, "Manifest the analysis runs on")->required();
    d->add_option("--config", diag.config, "Run configuration for sweeps");
    d->add_option("--sweep", diag.sweep, "alpha=v1,v2 | abs=on,off | tree=grid | tree=LxC,...");
    d->add_option("--set", diag.overrides, "Override a config key (key=value), repeatable");
    d->add_option("--out", diag.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return 1;
    }

    try {
        if (s->parsed()) return cmd_synth(synth);
        if (p->parsed()) return cmd_prepare(prep);
        if (t->parsed()) return cmd_train(train);
        if (i->parsed()) return cmd_infer(infer);
        if (e->parsed()) return cmd_eval(eval);
        if (d->parsed()) return cmd_diagnose(diag);
    } catch (const ConfigError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    }
    return 1;
}
