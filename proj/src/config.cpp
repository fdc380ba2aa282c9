#include "indeed/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace indeed {

namespace {

struct KeyHandler {
    const char* section;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T v;
    in >> v;
    if (!in || !in.eof())
        throw std::invalid_argument("config: bad value '" + value + "' for key '" + key + "'");
    return v;
}

std::string task_name(Task t) { return t == Task::DEN ? "den" : "uad"; }
Task parse_task(const std::string& key, const std::string& v) {
    if (v == "den") return Task::DEN;
    if (v == "uad") return Task::UAD;
    throw std::invalid_argument("config: key '" + key + "' expects den|uad, got '" + v + "'");
}

std::string mode_name(AdaptMode m) {
    switch (m) {
        case AdaptMode::S: return "s";
        case AdaptMode::L: return "l";
        default: return "ls";
    }
}
AdaptMode parse_mode(const std::string& key, const std::string& v) {
    if (v == "s") return AdaptMode::S;
    if (v == "l") return AdaptMode::L;
    if (v == "ls") return AdaptMode::LS;
    throw std::invalid_argument("config: key '" + key + "' expects s|l|ls, got '" + v + "'");
}

std::string shape_name(AnomalyShape s) {
    switch (s) {
        case AnomalyShape::Rectangle: return "rectangle";
        case AnomalyShape::Ellipse: return "ellipse";
        default: return "perlin-blob";
    }
}
AnomalyShape parse_shape(const std::string& key, const std::string& v) {
    if (v == "rectangle") return AnomalyShape::Rectangle;
    if (v == "ellipse") return AnomalyShape::Ellipse;
    if (v == "perlin-blob") return AnomalyShape::PerlinBlob;
    throw std::invalid_argument("config: key '" + key +
                                "' expects rectangle|ellipse|perlin-blob, got '" + v + "'");
}

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

const std::map<std::string, KeyHandler>& registry() {
    static const std::map<std::string, KeyHandler> reg = [] {
        std::map<std::string, KeyHandler> r;
        auto num = [&r](const char* section, const char* key, auto getter) {
            using Field = std::remove_reference_t<decltype(getter(std::declval<RunConfig&>()))>;
            r[key] = KeyHandler{
                section,
                [key, getter](RunConfig& c, const std::string& v) {
                    getter(c) = parse_number<Field>(key, v);
                },
                [getter](const RunConfig& c) {
                    std::ostringstream os;
                    os << getter(const_cast<RunConfig&>(c));
                    return os.str();
                }};
        };
        auto str = [&r](const char* section, const char* key, auto getter) {
            r[key] = KeyHandler{section,
                                [getter](RunConfig& c, const std::string& v) { getter(c) = v; },
                                [getter](const RunConfig& c) {
                                    return getter(const_cast<RunConfig&>(c));
                                }};
        };

        num("hyper", "alpha0_gamma", [](RunConfig& c) -> double& { return c.hyper.alpha0_gamma; });
        num("hyper", "beta0_gamma", [](RunConfig& c) -> double& { return c.hyper.beta0_gamma; });
        num("hyper", "alpha0_omega", [](RunConfig& c) -> double& { return c.hyper.alpha0_omega; });
        num("hyper", "beta0_omega", [](RunConfig& c) -> double& { return c.hyper.beta0_omega; });
        num("hyper", "alpha0_lambda",
            [](RunConfig& c) -> double& { return c.hyper.alpha0_lambda; });
        num("hyper", "beta0_lambda", [](RunConfig& c) -> double& { return c.hyper.beta0_lambda; });
        num("hyper", "tau", [](RunConfig& c) -> double& { return c.hyper.tau; });
        num("hyper", "sigma0", [](RunConfig& c) -> double& { return c.hyper.sigma0; });
        num("hyper", "r0", [](RunConfig& c) -> int& { return c.hyper.r0; });

        num("model", "depth", [](RunConfig& c) -> int& { return c.model.depth; });
        num("model", "kernel", [](RunConfig& c) -> int& { return c.model.kernel; });
        num("model", "channels", [](RunConfig& c) -> int& { return c.model.channels; });
        num("model", "groups", [](RunConfig& c) -> int& { return c.model.groups; });
        r["preset"] = KeyHandler{"model",
                                 [](RunConfig& c, const std::string& v) {
                                     if (v == "desk") {
                                         c.model = ModelConfig{};
                                     } else if (v == "paper") {
                                         c.model = paper_preset();
                                         c.hyper.r0 = c.model.r0;
                                     } else {
                                         throw std::invalid_argument(
                                             "config: key 'preset' expects desk|paper, got '" +
                                             v + "'");
                                     }
                                 },
                                 [](const RunConfig&) { return std::string("desk"); }};

        num("train", "epochs", [](RunConfig& c) -> int& { return c.train.epochs; });
        num("train", "batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; });
        num("train", "lr", [](RunConfig& c) -> double& { return c.train.lr; });
        num("train", "lr_decay_factor",
            [](RunConfig& c) -> double& { return c.train.lr_decay_factor; });
        num("train", "lr_decay_every",
            [](RunConfig& c) -> int& { return c.train.lr_decay_every; });

        r["adapt_mode"] = KeyHandler{"adapt",
                                     [](RunConfig& c, const std::string& v) {
                                         c.adapt.mode = parse_mode("adapt_mode", v);
                                     },
                                     [](const RunConfig& c) { return mode_name(c.adapt.mode); }};
        num("adapt", "adapt_lr", [](RunConfig& c) -> double& { return c.adapt.lr; });
        num("adapt", "adapt_batch_size",
            [](RunConfig& c) -> int& { return c.adapt.batch_size; });
        num("adapt", "adapt_max_steps", [](RunConfig& c) -> int& { return c.adapt.max_steps; });
        num("adapt", "adapt_patience", [](RunConfig& c) -> int& { return c.adapt.patience; });

        r["task"] = KeyHandler{"run",
                               [](RunConfig& c, const std::string& v) {
                                   c.task = parse_task("task", v);
                               },
                               [](const RunConfig& c) { return task_name(c.task); }};
        num("run", "seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
        str("run", "out_dir", [](RunConfig& c) -> std::string& { return c.out_dir; });
        num("run", "n", [](RunConfig& c) -> int& { return c.n; });
        num("run", "height", [](RunConfig& c) -> int& { return c.height; });
        num("run", "width", [](RunConfig& c) -> int& { return c.width; });
        num("run", "sigma", [](RunConfig& c) -> double& { return c.sigma; });
        num("run", "sigma_min", [](RunConfig& c) -> double& { return c.sigma_min; });
        num("run", "sigma_max", [](RunConfig& c) -> double& { return c.sigma_max; });
        num("run", "threshold", [](RunConfig& c) -> double& { return c.threshold; });
        num("run", "true_rank", [](RunConfig& c) -> int& { return c.true_rank; });
        num("run", "density", [](RunConfig& c) -> double& { return c.density; });
        num("run", "noise_sigma", [](RunConfig& c) -> double& { return c.noise_sigma; });
        str("run", "checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; });
        str("run", "checkpoint_out",
            [](RunConfig& c) -> std::string& { return c.checkpoint_out; });
        str("run", "data_dir", [](RunConfig& c) -> std::string& { return c.data_dir; });
        str("run", "input", [](RunConfig& c) -> std::string& { return c.input; });

        num("run", "anomaly_count_min", [](RunConfig& c) -> int& { return c.anomaly.count_min; });
        num("run", "anomaly_count_max", [](RunConfig& c) -> int& { return c.anomaly.count_max; });
        num("run", "anomaly_intensity_min",
            [](RunConfig& c) -> double& { return c.anomaly.intensity_min; });
        num("run", "anomaly_intensity_max",
            [](RunConfig& c) -> double& { return c.anomaly.intensity_max; });
        num("run", "anomaly_size_min",
            [](RunConfig& c) -> double& { return c.anomaly.size_min; });
        num("run", "anomaly_size_max",
            [](RunConfig& c) -> double& { return c.anomaly.size_max; });
        r["anomaly_shape"] =
            KeyHandler{"run",
                       [](RunConfig& c, const std::string& v) {
                           c.anomaly.shape = parse_shape("anomaly_shape", v);
                       },
                       [](const RunConfig& c) { return shape_name(c.anomaly.shape); }};
        return r;
    }();
    return reg;
}

} // namespace

void RunConfig::finalize() {
    model.r0 = hyper.r0;
    train.task = task;
    train.seed = seed;
    anomaly.seed = seed;
    hyper.validate();
    model.validate();
    train.validate();
    adapt.validate();
    if (n <= 0 || height <= 0 || width <= 0)
        throw std::invalid_argument("config: n, height, width must be positive");
    if (hyper.r0 > std::min(height, width))
        throw std::invalid_argument("config: r0 must not exceed min(height, width)");
}

bool apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& reg = registry();
    auto it = reg.find(key);
    if (it == reg.end()) return false;
    it->second.set(cfg, value);
    return true;
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileFormatError("config: cannot open " + path.string());
    static const std::vector<std::string> sections = {"hyper", "model", "train", "adapt", "run"};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config: malformed section at line " +
                                            std::to_string(lineno));
            const std::string sec = trim(line.substr(1, line.size() - 2));
            if (std::find(sections.begin(), sections.end(), sec) == sections.end())
                throw std::invalid_argument("config: unknown section '" + sec + "' at line " +
                                            std::to_string(lineno));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected 'key = value' at line " +
                                        std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!apply_config_key(cfg, key, value))
            throw std::invalid_argument("config: unknown key '" + key + "' at line " +
                                        std::to_string(lineno));
    }
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const auto& [key, handler] : registry()) out.push_back({handler.section, key.c_str()});
        return out;
    }();
    return keys;
}

void print_config(const RunConfig& cfg, std::ostream& os) {
    static const char* order[] = {"hyper", "model", "train", "adapt", "run"};
    const auto& reg = registry();
    for (const char* sec : order) {
        os << '[' << sec << "]\n";
        for (const auto& [key, handler] : reg) {
            if (std::string(handler.section) != sec) continue;
            if (key == "preset") continue; // expanded into model keys above
            os << key << " = " << handler.get(cfg) << '\n';
        }
        os << '\n';
    }
}

} // namespace indeed
