#include "protosolo/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace protosolo {

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected)
{
    throw std::invalid_argument("config key '" + std::string(key) + "': cannot parse '" + std::string(value) +
                                "' as " + std::string(expected));
}

std::size_t to_size(std::string_view key, std::string_view v)
{
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        bad_value(key, v, "a non-negative integer");
    }
    return out;
}

double to_double(std::string_view key, std::string_view v)
{
    const std::string s(v);
    char* end = nullptr;
    const double out = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') {
        bad_value(key, v, "a number");
    }
    return out;
}

bool to_bool(std::string_view key, std::string_view v)
{
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    bad_value(key, v, "a boolean");
}

std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T, class F>
std::vector<T> to_list(std::string_view v, F parse)
{
    std::vector<T> out;
    while (!v.empty()) {
        const auto comma = v.find(',');
        out.push_back(parse(trim(v.substr(0, comma))));
        if (comma == std::string_view::npos) {
            break;
        }
        v.remove_prefix(comma + 1);
    }
    return out;
}

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <class T>
std::string join(const std::vector<T>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if constexpr (std::is_floating_point_v<T>) {
            out += (i ? "," : "") + fmt(v[i]);
        } else {
            out += (i ? "," : "") + std::to_string(v[i]);
        }
    }
    return out;
}

} // namespace

const std::vector<std::string>& RunConfig::keys()
{
    static const std::vector<std::string> k{
        "classes", "per-class", "size", "data-seed", "train-fraction",
        "prototypes-per-class", "channels", "mode", "agg", "epsilon", "backbone", "kernel",
        "epochs-warm", "epochs-joint", "epochs-fc", "lr-warm", "lr-joint", "lr-fc", "batch-size", "seed",
        "projection", "lambda1", "lambda2", "lambda3", "separation-sign", "augment",
        "kappa", "pr-thresholds",
    };
    return k;
}

void RunConfig::set(std::string_view key, std::string_view value)
{
    value = trim(value);
    auto size = [&] { return to_size(key, value); };
    auto real = [&] { return to_double(key, value); };
    try {
        if (key == "classes") data.num_classes = size();
        else if (key == "per-class") data.per_class = size();
        else if (key == "size") data.image_size = size();
        else if (key == "data-seed") data.seed = size();
        else if (key == "train-fraction") data.train_fraction = real();
        else if (key == "prototypes-per-class") model.prototypes_per_class = size();
        else if (key == "channels") model.channels = size();
        else if (key == "mode") model.mode = parse_comparison_mode(value);
        else if (key == "agg") model.aggregation = parse_aggregation(value);
        else if (key == "epsilon") model.epsilon = real();
        else if (key == "backbone") model.backbone_channels = to_list<std::size_t>(value, [&](std::string_view s) { return to_size(key, s); });
        else if (key == "kernel") model.backbone_kernel = size();
        else if (key == "epochs-warm") train.warm_epochs = size();
        else if (key == "epochs-joint") train.joint_epochs = size();
        else if (key == "epochs-fc") train.fc_epochs = size();
        else if (key == "lr-warm") train.lr_warm = real();
        else if (key == "lr-joint") train.lr_joint = real();
        else if (key == "lr-fc") train.lr_fc = real();
        else if (key == "batch-size") train.batch_size = size();
        else if (key == "seed") train.seed = size();
        else if (key == "projection") {
            if (value == "project") train.project = true;
            else if (value == "none") train.project = false;
            else bad_value(key, value, "'project' or 'none'");
        }
        else if (key == "lambda1") train.weights.lambda1 = real();
        else if (key == "lambda2") train.weights.lambda2 = real();
        else if (key == "lambda3") train.weights.lambda3 = real();
        else if (key == "separation-sign") train.separation_sign = parse_separation_sign(value);
        else if (key == "augment") train.augment = to_bool(key, value);
        else if (key == "kappa") kappa = real();
        else if (key == "pr-thresholds") pr_thresholds = to_list<double>(value, [&](std::string_view s) { return to_double(key, s); });
        else throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        if (msg.find("config key") == 0 || msg.find("unknown config key") == 0) {
            throw;
        }
        throw std::invalid_argument("config key '" + std::string(key) + "': " + msg);
    }
}

void RunConfig::apply_text(std::string_view text, std::string_view origin)
{
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw std::invalid_argument(std::string(origin) + ":" + std::to_string(line_no) +
                                        ": expected 'key = value'");
        }
        try {
            set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void RunConfig::apply_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::invalid_argument("cannot read config file '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    apply_text(buf.str(), path.string());
}

ModelConfig RunConfig::resolved_model() const
{
    ModelConfig m = model;
    m.num_classes = data.num_classes;
    m.image_size = data.image_size;
    const auto extents = m.backbone_extents();
    m.height = m.width = extents.empty() ? m.image_size : extents.back();
    m.validate();
    return m;
}

std::string RunConfig::to_text() const
{
    std::ostringstream o;
    o << "classes = " << data.num_classes << "\n"
      << "per-class = " << data.per_class << "\n"
      << "size = " << data.image_size << "\n"
      << "data-seed = " << data.seed << "\n"
      << "train-fraction = " << fmt(data.train_fraction) << "\n"
      << "prototypes-per-class = " << model.prototypes_per_class << "\n"
      << "channels = " << model.channels << "\n"
      << "mode = " << (model.mode == ComparisonMode::feature_map ? "fmc" : "vec") << "\n"
      << "agg = " << (model.aggregation == Aggregation::single_activation ? "sa" : "dense") << "\n"
      << "epsilon = " << fmt(model.epsilon) << "\n"
      << "backbone = " << join(model.backbone_channels) << "\n"
      << "kernel = " << model.backbone_kernel << "\n"
      << "epochs-warm = " << train.warm_epochs << "\n"
      << "epochs-joint = " << train.joint_epochs << "\n"
      << "epochs-fc = " << train.fc_epochs << "\n"
      << "lr-warm = " << fmt(train.lr_warm) << "\n"
      << "lr-joint = " << fmt(train.lr_joint) << "\n"
      << "lr-fc = " << fmt(train.lr_fc) << "\n"
      << "batch-size = " << train.batch_size << "\n"
      << "seed = " << train.seed << "\n"
      << "projection = " << (train.project ? "project" : "none") << "\n"
      << "lambda1 = " << fmt(train.weights.lambda1) << "\n"
      << "lambda2 = " << fmt(train.weights.lambda2) << "\n"
      << "lambda3 = " << fmt(train.weights.lambda3) << "\n"
      << "separation-sign = " << to_string(train.separation_sign) << "\n"
      << "augment = " << (train.augment ? "true" : "false") << "\n"
      << "kappa = " << fmt(kappa) << "\n"
      << "pr-thresholds = " << join(pr_thresholds) << "\n";
    return o.str();
}

} // namespace protosolo
