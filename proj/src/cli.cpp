#include "indeed/cli.hpp"

#include "indeed/config.hpp"
#include "indeed/image_io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace indeed {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string item_id(int i) {
    std::ostringstream os;
    os << std::setw(4) << std::setfill('0') << i;
    return os.str();
}

void ensure_dir(const fs::path& dir) { fs::create_directories(dir); }

Model load_model_or_fail(const RunConfig& cfg) {
    if (cfg.checkpoint.empty())
        throw std::invalid_argument("this command needs --checkpoint");
    return load_checkpoint(cfg.checkpoint);
}

double require_threshold(const RunConfig& cfg) {
    if (!(cfg.threshold > 0.0))
        throw std::invalid_argument(
            "--threshold (rank-indicator scale) is required for this command and has no "
            "default");
    return cfg.threshold;
}

json losses_to_json(const LossBreakdown& lb) {
    return json{{"fid", lb.fid},         {"rank", lb.rank},   {"sparse", lb.sparse},
                {"orth", lb.orth},       {"sup", lb.sup},     {"total", lb.total},
                {"l_gamma", lb.l_gamma}, {"l_omega", lb.l_omega}, {"l_lambda", lb.l_lambda}};
}

void write_decomposition_outputs(const DecompositionResult& d, const ImageTensor& Y,
                                 const fs::path& dir, double threshold) {
    ensure_dir(dir);
    const auto& cd = d.ch(0);
    write_image(denoise_output(d), dir / "denoised.png", 16);

    auto emit = [&](const Matrix& m, const std::string& stem) {
        write_component_image(m, dir / (stem + ".png"));
        write_array_f64(m, dir / (stem + ".f64"));
    };
    emit(cd.L_hat, "L_hat");
    emit(cd.samples.S_hat, "S_hat");
    emit(cd.N_hat, "N_hat");

    const LowRankMoments lm = low_rank_moments(cd.post.A, cd.post.B);
    emit(lm.mu_L, "mu_L");
    emit(lm.var_L.cwiseSqrt(), "sigma_L");
    emit(cd.post.S.mean, "mu_S");
    emit(cd.post.S.std, "sigma_S");
    emit(gamma_mean(cd.leaf.omega), "mu_Omega");
    emit(gamma_mean(cd.leaf.lambda), "mu_Lambda");

    json record;
    record["seed"] = d.seed;
    record["losses"] = losses_to_json(d.losses);
    record["rank_indicator"] = rank_indicator(cd.leaf.gamma, threshold);
    const Matrix gm = gamma_mean(cd.leaf.gamma);
    record["gamma_mean"] = std::vector<double>(gm.data(), gm.data() + gm.size());
    const double identity_err =
        (Y.ch(0) - (cd.L_hat + cd.samples.S_hat + cd.N_hat)).cwiseAbs().maxCoeff();
    record["additive_identity_inf_norm"] = identity_err;
    std::ofstream rec(dir / "record.jsonl", std::ios::trunc);
    rec << record.dump() << '\n';
}

// --- dataset files -------------------------------------------------------------

void cmd_synth(const RunConfig& cfg) {
    const fs::path dir = cfg.out_dir;
    ensure_dir(dir);
    json manifest;
    manifest["task"] = cfg.task == Task::DEN ? "den" : "uad";
    manifest["n"] = cfg.n;
    manifest["seed"] = cfg.seed;
    json items = json::array();

    if (cfg.task == Task::DEN) {
        Rng rng(Rng::mix(cfg.seed, 0xda7aULL));
        for (int i = 0; i < cfg.n; ++i) {
            const Matrix clean = synthetic_clean_patch(cfg.height, cfg.width, rng.raw());
            const double sigma =
                cfg.sigma >= 0.0 ? cfg.sigma : rng.uniform(cfg.sigma_min, cfg.sigma_max);
            const Matrix noisy = add_awgn(clean, sigma, rng.raw());
            const std::string id = item_id(i);
            write_image(ImageTensor(clean), dir / ("clean_" + id + ".png"), 16);
            write_component_image(noisy, dir / ("noisy_" + id + ".png"));
            items.push_back({{"id", id},
                             {"clean", "clean_" + id + ".png"},
                             {"noisy", "noisy_" + id + ".png"},
                             {"sigma", sigma}});
        }
    } else {
        Rng rng(Rng::mix(cfg.seed, 0xda7aULL));
        constexpr AnomalyShape kShapes[] = {AnomalyShape::Rectangle, AnomalyShape::Ellipse,
                                            AnomalyShape::PerlinBlob};
        for (int i = 0; i < cfg.n; ++i) {
            const Matrix normal = synthetic_clean_patch(cfg.height, cfg.width, rng.raw());
            AnomalySpec spec = cfg.anomaly;
            spec.shape = kShapes[i % 3];
            spec.seed = rng.raw();
            const AnomalyResult an = synthesize_anomaly(normal, spec);
            const std::string id = item_id(i);
            write_image(ImageTensor(normal), dir / ("normal_" + id + ".png"), 16);
            write_image(ImageTensor(an.Y), dir / ("image_" + id + ".png"), 16);
            Matrix mask = an.mask.cast<double>();
            write_image(ImageTensor(mask), dir / ("mask_" + id + ".png"), 8);
            items.push_back({{"id", id},
                             {"normal", "normal_" + id + ".png"},
                             {"image", "image_" + id + ".png"},
                             {"mask", "mask_" + id + ".png"}});
        }
    }
    manifest["items"] = items;
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
    std::cout << "synth: wrote " << cfg.n << " items to " << dir << '\n';
}

struct LoadedDataset {
    Dataset data;
    std::vector<std::string> ids;
    Task task = Task::DEN;
};

LoadedDataset load_dataset(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FileFormatError("load_dataset: missing manifest.json in " + dir.string());
    json manifest;
    in >> manifest;
    LoadedDataset out;
    out.task = manifest.at("task").get<std::string>() == "den" ? Task::DEN : Task::UAD;
    for (const auto& item : manifest.at("items")) {
        TaskSample s;
        out.ids.push_back(item.at("id").get<std::string>());
        if (out.task == Task::DEN) {
            const Matrix clean =
                read_image(dir / item.at("clean").get<std::string>()).ch(0);
            s.Y = ImageTensor(read_component_image(dir / item.at("noisy").get<std::string>()));
            s.target.task = Task::DEN;
            s.target.U = clean;
            s.noise_sigma = item.at("sigma").get<double>();
        } else {
            const Matrix normal =
                read_image(dir / item.at("normal").get<std::string>()).ch(0);
            const Matrix image = read_image(dir / item.at("image").get<std::string>()).ch(0);
            s.Y = ImageTensor(image);
            s.target.task = Task::UAD;
            s.target.U_N = normal;
            s.target.U_A = image - normal;
            const Matrix mask = read_image(dir / item.at("mask").get<std::string>()).ch(0);
            s.mask = mask.array() > 0.5;
        }
        out.data.push_back(std::move(s));
    }
    return out;
}

void cmd_train(RunConfig& cfg) {
    LoadedDataset ds;
    if (!cfg.data_dir.empty()) {
        ds = load_dataset(cfg.data_dir);
        if (ds.task != cfg.task)
            throw std::invalid_argument("train: dataset task differs from --task");
    } else {
        ds.task = cfg.task;
        ds.data = cfg.task == Task::DEN
                      ? make_denoise_dataset(cfg.n, cfg.height, cfg.width, cfg.sigma_min,
                                             cfg.sigma_max, cfg.seed)
                      : make_uad_dataset(cfg.n, cfg.height, cfg.width, cfg.anomaly, cfg.seed);
    }
    Model model = cfg.checkpoint.empty() ? build_model(cfg.model, cfg.seed)
                                         : load_checkpoint(cfg.checkpoint);
    const TrainHistory history = train(model, ds.data, cfg.train, cfg.hyper);
    ensure_dir(cfg.out_dir);
    write_history_csv(history, fs::path(cfg.out_dir) / "history.csv");
    const std::string ckpt_out = cfg.checkpoint_out.empty()
                                     ? (fs::path(cfg.out_dir) / "model.ckpt").string()
                                     : cfg.checkpoint_out;
    save_checkpoint(model, ckpt_out);
    std::cout << "train: " << history.epoch_means.size() << " epochs, final total loss "
              << history.epoch_means.back().total << ", checkpoint " << ckpt_out << '\n';
}

void cmd_decompose(const RunConfig& cfg) {
    if (cfg.input.empty()) throw std::invalid_argument("decompose: --input image required");
    const Model model = load_model_or_fail(cfg);
    ImageTensor Y = read_image(cfg.input);
    const DecompositionResult d = decompose(model, Y, cfg.hyper, cfg.seed);
    write_decomposition_outputs(d, Y, cfg.out_dir, require_threshold(cfg));
    std::cout << "decompose: outputs in " << cfg.out_dir << '\n';
}

std::vector<ImageTensor> load_unlabeled_images(const fs::path& dir) {
    std::vector<ImageTensor> images;
    if (fs::exists(dir / "manifest.json")) {
        LoadedDataset ds = load_dataset(dir);
        for (auto& s : ds.data) images.push_back(std::move(s.Y));
        return images;
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".pgm" || ext == ".ppm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        if (fs::exists(f.string() + ".range.json"))
            images.emplace_back(read_component_image(f));
        else
            images.push_back(read_image(f));
    }
    if (images.empty()) throw std::invalid_argument("no images found in " + dir.string());
    return images;
}

void cmd_adapt(const RunConfig& cfg) {
    Model model = load_model_or_fail(cfg);
    if (cfg.data_dir.empty()) throw std::invalid_argument("adapt: --data_dir required");
    const auto images = load_unlabeled_images(cfg.data_dir);
    const AdaptHistory history = adapt(model, images, cfg.adapt, cfg.hyper);
    ensure_dir(cfg.out_dir);
    std::ofstream csv(fs::path(cfg.out_dir) / "adapt_history.csv", std::ios::trunc);
    csv << "step,objective\n";
    for (size_t i = 0; i < history.objective.size(); ++i)
        csv << i << ',' << history.objective[i] << '\n';
    const std::string ckpt_out = cfg.checkpoint_out.empty()
                                     ? (fs::path(cfg.out_dir) / "adapted.ckpt").string()
                                     : cfg.checkpoint_out;
    save_checkpoint(model, ckpt_out);
    std::cout << "adapt: " << history.steps_run << " steps"
              << (history.early_stopped ? " (early stop)" : "") << ", checkpoint " << ckpt_out
              << '\n';
}

void cmd_adapt_online(const RunConfig& cfg) {
    const Model model = load_model_or_fail(cfg);
    if (cfg.input.empty()) throw std::invalid_argument("adapt-online: --input image required");
    ImageTensor Y = read_image(cfg.input);
    auto [result, adapted] = adapt_online(model, Y, cfg.adapt, cfg.hyper, cfg.seed);
    write_decomposition_outputs(result, Y, cfg.out_dir, require_threshold(cfg));
    if (!cfg.checkpoint_out.empty()) save_checkpoint(adapted, cfg.checkpoint_out);
    std::cout << "adapt-online: outputs in " << cfg.out_dir << '\n';
}

void cmd_solve(const RunConfig& cfg) {
    SolverConfig scfg;
    scfg.r0 = cfg.hyper.r0;
    scfg.seed = cfg.seed;

    ImageTensor Y;
    json extra;
    if (!cfg.input.empty()) {
        Y = read_image(cfg.input);
    } else {
        const SyntheticLrs lrs = generate_synthetic_lrs(cfg.height, cfg.width, cfg.true_rank,
                                                        cfg.density, cfg.noise_sigma, cfg.seed);
        Y = ImageTensor(lrs.Y);
        ensure_dir(cfg.out_dir);
        write_array_f64(lrs.L_true, fs::path(cfg.out_dir) / "L_true.f64");
        write_array_f64(lrs.S_true, fs::path(cfg.out_dir) / "S_true.f64");
        extra["true_rank"] = cfg.true_rank;
    }
    const SolveReport report = solve_single_image(Y, cfg.hyper, scfg);
    write_decomposition_outputs(report.result, Y, cfg.out_dir, require_threshold(cfg));
    if (extra.contains("true_rank")) {
        const Matrix L_true = read_array_f64(fs::path(cfg.out_dir) / "L_true.f64");
        extra["rel_error_L"] =
            (report.result.ch(0).L_hat - L_true).norm() / std::max(1e-30, L_true.norm());
    }
    std::ofstream trace(fs::path(cfg.out_dir) / "trace.csv", std::ios::trunc);
    trace << "outer_iter,objective\n";
    for (size_t i = 0; i < report.trace.size(); ++i)
        trace << i << ',' << std::setprecision(17) << report.trace[i] << '\n';
    if (!extra.empty()) {
        std::ofstream rec(fs::path(cfg.out_dir) / "recovery.json", std::ios::trunc);
        rec << extra.dump(2) << '\n';
    }
    std::cout << "solve: " << report.iters_run << " outer iterations, final objective "
              << report.trace.back() << '\n';
}

void cmd_eval_denoise(const RunConfig& cfg) {
    const Model model = load_model_or_fail(cfg);
    if (cfg.data_dir.empty()) throw std::invalid_argument("eval-denoise: --data_dir required");
    LoadedDataset ds = load_dataset(cfg.data_dir);
    if (ds.task != Task::DEN) throw std::invalid_argument("eval-denoise: dataset is not den");
    ensure_dir(cfg.out_dir);
    std::ofstream csv(fs::path(cfg.out_dir) / "metrics.csv", std::ios::trunc);
    csv << "image_id,psnr,ssim\n";
    double mean_psnr = 0.0;
    for (size_t i = 0; i < ds.data.size(); ++i) {
        const auto& s = ds.data[i];
        const DecompositionResult d =
            decompose(model, s.Y, cfg.hyper, Rng::mix(cfg.seed, i));
        const fs::path out_png = fs::path(cfg.out_dir) / ("denoised_" + ds.ids[i] + ".png");
        write_image(denoise_output(d), out_png, 16);
        // score what was actually written so offline recomputation agrees
        const Matrix denoised = read_image(out_png).ch(0);
        const double p = psnr(denoised, s.target.U);
        const double ss = ssim(denoised, s.target.U);
        csv << ds.ids[i] << ',' << std::setprecision(17) << p << ',' << ss << '\n';
        mean_psnr += p;
    }
    mean_psnr /= static_cast<double>(ds.data.size());
    std::cout << "eval-denoise: mean PSNR " << mean_psnr << " dB over " << ds.data.size()
              << " images\n";
}

void cmd_eval_uad(const RunConfig& cfg) {
    const Model model = load_model_or_fail(cfg);
    if (cfg.data_dir.empty()) throw std::invalid_argument("eval-uad: --data_dir required");
    LoadedDataset ds = load_dataset(cfg.data_dir);
    if (ds.task != Task::UAD) throw std::invalid_argument("eval-uad: dataset is not uad");
    ensure_dir(cfg.out_dir);
    std::ofstream csv(fs::path(cfg.out_dir) / "metrics.csv", std::ios::trunc);
    csv << "image_id,auroc,ap\n";
    std::vector<double> pooled_scores;
    std::vector<int> pooled_labels;
    for (size_t i = 0; i < ds.data.size(); ++i) {
        const auto& s = ds.data[i];
        const DecompositionResult d =
            decompose(model, s.Y, cfg.hyper, Rng::mix(cfg.seed, i));
        const Matrix map = anomaly_map(d);
        write_image(ImageTensor(map), fs::path(cfg.out_dir) / ("map_" + ds.ids[i] + ".png"), 16);
        std::vector<double> scores;
        std::vector<int> labels;
        for (Eigen::Index r = 0; r < map.rows(); ++r)
            for (Eigen::Index c = 0; c < map.cols(); ++c) {
                scores.push_back(map(r, c));
                labels.push_back(s.mask(r, c) ? 1 : 0);
                pooled_scores.push_back(map(r, c));
                pooled_labels.push_back(s.mask(r, c) ? 1 : 0);
            }
        const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
        const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
        if (has_pos && has_neg)
            csv << ds.ids[i] << ',' << auroc(scores, labels) << ','
                << average_precision(scores, labels) << '\n';
        else
            csv << ds.ids[i] << ",nan,nan\n";
    }
    const double pooled_auroc = auroc(pooled_scores, pooled_labels);
    const double pooled_ap = average_precision(pooled_scores, pooled_labels);
    std::ofstream pooled(fs::path(cfg.out_dir) / "pooled.json", std::ios::trunc);
    pooled << json{{"auroc", pooled_auroc}, {"ap", pooled_ap}}.dump(2) << '\n';
    std::cout << "eval-uad: pooled AUROC " << pooled_auroc << ", AP " << pooled_ap << '\n';
}

void cmd_diagnose(const RunConfig& cfg) {
    const Model model = load_model_or_fail(cfg);
    if (cfg.data_dir.empty()) throw std::invalid_argument("diagnose: --data_dir required");
    const auto images = load_unlabeled_images(cfg.data_dir);
    const double threshold = require_threshold(cfg);
    ensure_dir(cfg.out_dir);
    std::ofstream sig(fs::path(cfg.out_dir) / "signatures.csv", std::ios::trunc);
    sig << "image_id,l_rank,l_sparse,rank_indicator\n";
    std::ofstream gam(fs::path(cfg.out_dir) / "gamma_means.csv", std::ios::trunc);
    gam << "image_id,component,gamma_mean\n";
    for (size_t i = 0; i < images.size(); ++i) {
        const DecompositionResult d =
            decompose(model, images[i], cfg.hyper, Rng::mix(cfg.seed, i));
        const OodSignature s = ood_signature(d);
        sig << item_id(static_cast<int>(i)) << ',' << std::setprecision(17) << s.l_rank << ','
            << s.l_sparse << ',' << rank_indicator(d.ch(0).leaf.gamma, threshold) << '\n';
        const Matrix gm = gamma_mean(d.ch(0).leaf.gamma);
        for (Eigen::Index k = 0; k < gm.rows(); ++k)
            gam << item_id(static_cast<int>(i)) << ',' << k << ',' << gm(k, 0) << '\n';
    }
    std::cout << "diagnose: wrote signatures for " << images.size() << " images\n";
}

} // namespace

int cli_run(const std::vector<std::string>& args) {
    CLI::App app{"Interpretable variational image decomposition (low-rank + sparse + noise)"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string config_path;
    bool print_cfg = false;

    // config file first, env var second, flags last
    for (size_t i = 0; i + 1 < args.size(); ++i)
        if (args[i] == "--config") config_path = args[i + 1];
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    if (const char* env = std::getenv("INDEED_OUT_DIR")) cfg.out_dir = env;

    const std::vector<std::string> commands = {"synth",  "train",        "decompose",
                                               "adapt",  "adapt-online", "solve",
                                               "eval-denoise", "eval-uad", "diagnose"};
    std::map<std::string, CLI::App*> subs;
    for (const auto& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "config file (already applied)");
        sub->add_flag("--print-config", print_cfg, "echo the effective config and exit");
        for (const auto& key : config_keys()) {
            const std::string flag = std::string("--") + key.key;
            sub->add_option_function<std::string>(
                flag,
                [&cfg, key](const std::string& v) {
                    if (!apply_config_key(cfg, key.key, v))
                        throw CLI::ValidationError(std::string("unknown key ") + key.key);
                },
                std::string(key.section) + "." + key.key);
        }
        subs[name] = sub;
    }

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        cfg.finalize();
        if (print_cfg) {
            print_config(cfg, std::cout);
            return 0;
        }
        for (const auto& name : commands) {
            if (!subs[name]->parsed()) continue;
            if (name == "synth") cmd_synth(cfg);
            else if (name == "train") cmd_train(cfg);
            else if (name == "decompose") cmd_decompose(cfg);
            else if (name == "adapt") cmd_adapt(cfg);
            else if (name == "adapt-online") cmd_adapt_online(cfg);
            else if (name == "solve") cmd_solve(cfg);
            else if (name == "eval-denoise") cmd_eval_denoise(cfg);
            else if (name == "eval-uad") cmd_eval_uad(cfg);
            else if (name == "diagnose") cmd_diagnose(cfg);
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace indeed
