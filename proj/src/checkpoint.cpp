#include "protosolo/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace protosolo {

namespace {

constexpr std::string_view kMagic = "PROTOSOLO-CHECKPOINT";
constexpr std::string_view kEndHeader = "end-header";

std::string format_double(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string join_sizes(const std::vector<std::size_t>& v, char sep)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i != 0) {
            out += sep;
        }
        out += std::to_string(v[i]);
    }
    return out;
}

[[noreturn]] void fail(const std::string& message)
{
    throw std::runtime_error("checkpoint: " + message);
}

std::size_t parse_size(std::string_view text, std::string_view what)
{
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        fail("malformed integer '" + std::string(text) + "' for " + std::string(what));
    }
    return v;
}

double parse_double(const std::string& text, std::string_view what)
{
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0') {
        fail("malformed number '" + text + "' for " + std::string(what));
    }
    return v;
}

std::vector<std::size_t> parse_size_list(const std::string& text, char sep, std::string_view what)
{
    std::vector<std::size_t> out;
    if (text.empty()) {
        return out;
    }
    std::size_t start = 0;
    while (true) {
        const std::size_t end = text.find(sep, start);
        out.push_back(parse_size(std::string_view(text).substr(start, end - start), what));
        if (end == std::string::npos) {
            break;
        }
        start = end + 1;
    }
    return out;
}

void append_le(std::string& out, double v)
{
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>(bits & 0xffU));
        bits >>= 8;
    }
}

double read_le(const char* p)
{
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) {
        bits = (bits << 8) | static_cast<unsigned char>(p[i]);
    }
    return std::bit_cast<double>(bits);
}

} // namespace

std::string model_config_text(const ModelConfig& c, std::string_view prefix)
{
    const std::string p(prefix);
    std::ostringstream out;
    out << p << "classes = " << c.num_classes << "\n";
    out << p << "prototypes-per-class = " << c.prototypes_per_class << "\n";
    out << p << "channels = " << c.channels << "\n";
    out << p << "height = " << c.height << "\n";
    out << p << "width = " << c.width << "\n";
    out << p << "mode = " << to_string(c.mode) << "\n";
    out << p << "aggregation = " << to_string(c.aggregation) << "\n";
    out << p << "epsilon = " << format_double(c.epsilon) << "\n";
    out << p << "backbone = " << join_sizes(c.backbone_channels, ',') << "\n";
    out << p << "kernel = " << c.backbone_kernel << "\n";
    out << p << "image-size = " << c.image_size << "\n";
    return out.str();
}

Checkpoint make_checkpoint(const Model& model, const TrainingMetadata& meta)
{
    Checkpoint ck;
    ck.config = model.config();
    ck.meta = meta;
    for (const auto& p : model.parameters()) {
        ck.arrays.push_back({p.name, p.value});
    }
    return ck;
}

void load_into(const Checkpoint& checkpoint, Model& model)
{
    std::map<std::string, const Tensor*> by_name;
    for (const auto& a : checkpoint.arrays) {
        by_name[a.name] = &a.value;
    }
    for (auto& p : model.parameters()) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            fail("array '" + p.name + "' is missing");
        }
        if (it->second->shape() != p.value.shape()) {
            fail("array '" + p.name + "' has shape " + shape_to_string(it->second->shape()) + " but the model expects " +
                 shape_to_string(p.value.shape()));
        }
    }
    if (by_name.size() != model.parameters().size()) {
        fail("checkpoint holds arrays the model does not define");
    }
    for (auto& p : model.parameters()) {
        p.value = *by_name.at(p.name);
    }
}

Model model_from_checkpoint(const Checkpoint& checkpoint)
{
    Model model(checkpoint.config, 0);
    load_into(checkpoint, model);
    return model;
}

std::string serialize_checkpoint(const Checkpoint& ck)
{
    std::ostringstream head;
    head << kMagic << "\n";
    head << "version = " << checkpoint_version << "\n";
    head << model_config_text(ck.config, "config.");
    head << "meta.seed = " << ck.meta.seed << "\n";
    head << "meta.epochs-warm = " << ck.meta.warm_epochs << "\n";
    head << "meta.epochs-joint = " << ck.meta.joint_epochs << "\n";
    head << "meta.epochs-fc = " << ck.meta.fc_epochs << "\n";
    head << "meta.projection = " << (ck.meta.projected ? "project" : "none") << "\n";
    head << "meta.loss.crs = " << format_double(ck.meta.final_losses.crs) << "\n";
    head << "meta.loss.clst = " << format_double(ck.meta.final_losses.clst) << "\n";
    head << "meta.loss.sep = " << format_double(ck.meta.final_losses.sep) << "\n";
    head << "meta.loss.w = " << format_double(ck.meta.final_losses.w) << "\n";
    head << "meta.loss.total = " << format_double(ck.meta.final_losses.total) << "\n";
    for (const auto& a : ck.arrays) {
        head << "array " << a.name << " " << join_sizes(a.value.shape(), 'x') << "\n";
    }
    head << kEndHeader << "\n";
    std::string out = head.str();
    for (const auto& a : ck.arrays) {
        for (double v : a.value.data()) {
            append_le(out, v);
        }
    }
    return out;
}

Checkpoint parse_checkpoint(std::string_view bytes)
{
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const std::size_t end = bytes.find('\n', pos);
        if (end == std::string_view::npos) {
            fail("truncated header");
        }
        std::string line(bytes.substr(pos, end - pos));
        pos = end + 1;
        return line;
    };

    if (next_line() != kMagic) {
        fail("bad magic (not a checkpoint file)");
    }
    std::map<std::string, std::string> kv;
    std::vector<std::pair<std::string, Shape>> layout;
    while (true) {
        const std::string line = next_line();
        if (line == kEndHeader) {
            break;
        }
        if (line.rfind("array ", 0) == 0) {
            std::istringstream in(line.substr(6));
            std::string name, dims;
            in >> name >> dims;
            if (name.empty()) {
                fail("malformed array line '" + line + "'");
            }
            layout.emplace_back(name, parse_size_list(dims, 'x', name));
            continue;
        }
        const std::size_t eq = line.find(" = ");
        if (eq == std::string::npos) {
            fail("malformed header line '" + line + "'");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) {
            fail("header is missing '" + key + "'");
        }
        return it->second;
    };

    if (get("version") != std::to_string(checkpoint_version)) {
        fail("unsupported format version " + get("version"));
    }

    Checkpoint ck;
    ModelConfig& c = ck.config;
    c.num_classes = parse_size(get("config.classes"), "classes");
    c.prototypes_per_class = parse_size(get("config.prototypes-per-class"), "prototypes-per-class");
    c.channels = parse_size(get("config.channels"), "channels");
    c.height = parse_size(get("config.height"), "height");
    c.width = parse_size(get("config.width"), "width");
    try {
        c.mode = parse_comparison_mode(get("config.mode"));
        c.aggregation = parse_aggregation(get("config.aggregation"));
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
    c.epsilon = parse_double(get("config.epsilon"), "epsilon");
    c.backbone_channels = parse_size_list(get("config.backbone"), ',', "backbone");
    c.backbone_kernel = parse_size(get("config.kernel"), "kernel");
    c.image_size = parse_size(get("config.image-size"), "image-size");

    TrainingMetadata& m = ck.meta;
    m.seed = parse_size(get("meta.seed"), "seed");
    m.warm_epochs = parse_size(get("meta.epochs-warm"), "epochs-warm");
    m.joint_epochs = parse_size(get("meta.epochs-joint"), "epochs-joint");
    m.fc_epochs = parse_size(get("meta.epochs-fc"), "epochs-fc");
    const std::string& proj = get("meta.projection");
    if (proj != "none" && proj != "project") {
        fail("unknown projection value '" + proj + "'");
    }
    m.projected = proj == "project";
    m.final_losses.crs = parse_double(get("meta.loss.crs"), "loss.crs");
    m.final_losses.clst = parse_double(get("meta.loss.clst"), "loss.clst");
    m.final_losses.sep = parse_double(get("meta.loss.sep"), "loss.sep");
    m.final_losses.w = parse_double(get("meta.loss.w"), "loss.w");
    m.final_losses.total = parse_double(get("meta.loss.total"), "loss.total");

    std::size_t payload = 0;
    for (const auto& [name, shape] : layout) {
        payload += shape_product(shape) * 8;
    }
    const std::size_t remaining = bytes.size() - pos;
    if (remaining < payload) {
        fail("truncated payload: expected " + std::to_string(payload) + " bytes, found " + std::to_string(remaining));
    }
    if (remaining > payload) {
        fail("unexpected " + std::to_string(remaining - payload) + " trailing bytes");
    }
    for (const auto& [name, shape] : layout) {
        Tensor t(shape);
        for (double& v : t.data()) {
            v = read_le(bytes.data() + pos);
            pos += 8;
        }
        ck.arrays.push_back({name, std::move(t)});
    }
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path)
{
    const std::string bytes = serialize_checkpoint(checkpoint);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("checkpoint: cannot write '" + tmp.string() + "'");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw std::runtime_error("checkpoint: write failed for '" + tmp.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot read '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str());
}

} // namespace protosolo
