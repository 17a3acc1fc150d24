#include "protosolo/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "protosolo/image_io.hpp"

namespace protosolo {

namespace fs = std::filesystem;

void DatasetSpec::validate() const
{
    if (num_classes < 1) {
        throw std::invalid_argument("dataset: classes must be positive");
    }
    if (per_class < 2) {
        throw std::invalid_argument("dataset: per-class must be at least 2 so both splits are nonempty");
    }
    if (image_size < min_image_size) {
        throw std::invalid_argument("dataset: size " + std::to_string(image_size) + " is below the minimum " +
                                    std::to_string(min_image_size) + " needed to place body and part");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("dataset: train-fraction must lie in (0,1)");
    }
}

std::string DatasetSpec::to_text() const
{
    std::ostringstream out;
    out << "classes = " << num_classes << "\n";
    out << "per-class = " << per_class << "\n";
    out << "size = " << image_size << "\n";
    out << "seed = " << seed << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", train_fraction);
    out << "train-fraction = " << buf << "\n";
    return out.str();
}

std::string class_name(std::size_t label)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "class_%02zu", label);
    return buf;
}

namespace {

constexpr double kDegree = std::numbers::pi / 180.0;

std::array<double, 3> hsv_to_rgb(double h, double s, double v)
{
    h = std::fmod(h, 360.0);
    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0));
    const double m = v - c;
    double r = 0, g = 0, b = 0;
    if (h < 60) {
        r = c, g = x;
    } else if (h < 120) {
        r = x, g = c;
    } else if (h < 180) {
        g = c, b = x;
    } else if (h < 240) {
        g = x, b = c;
    } else if (h < 300) {
        r = x, b = c;
    } else {
        r = c, b = x;
    }
    return {r + m, g + m, b + m};
}

bool inside_glyph(GlyphShape shape, double dx, double dy, double r)
{
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (shape) {
    case GlyphShape::disk:
        return dx * dx + dy * dy <= r * r;
    case GlyphShape::square:
        return ax <= 0.8 * r && ay <= 0.8 * r;
    case GlyphShape::triangle: {
        if (dy < -r || dy > 0.8 * r) {
            return false;
        }
        return ax <= (dy + r) / 1.8;
    }
    case GlyphShape::cross:
        return (ax <= 0.32 * r && ay <= r) || (ay <= 0.32 * r && ax <= r);
    case GlyphShape::diamond:
        return ax + ay <= r;
    case GlyphShape::ring: {
        const double d2 = dx * dx + dy * dy;
        return d2 <= r * r && d2 >= 0.25 * r * r;
    }
    case GlyphShape::bar:
        return ax <= r && ay <= 0.38 * r;
    case GlyphShape::chevron:
        return ax <= r && std::abs(dy - (0.9 * ax - 0.45 * r)) <= 0.32 * r;
    }
    return false;
}

double quantize(double v)
{
    return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

Sample render_sample(const DatasetSpec& spec, std::size_t label, std::size_t index)
{
    const std::size_t s = spec.image_size;
    const double sz = static_cast<double>(s);
    Rng rng = Rng::derive(spec.seed, label, index);

    Sample out;
    out.label = label;
    char id[48];
    std::snprintf(id, sizeof(id), "c%zu_%04zu", label, index);
    out.id = id;
    out.image = Tensor(Shape{3, s, s});
    out.mask = Tensor(Shape{s, s});
    out.part_mask = Tensor(Shape{s, s});

    // Background: tinted base, a few low-frequency gratings, pixel noise.
    const double base = rng.uniform(0.32, 0.52);
    std::array<double, 3> tint{};
    for (double& t : tint) {
        t = base + rng.uniform(-0.05, 0.05);
    }
    struct Grating {
        double fx, fy, phase, amp;
    };
    std::array<Grating, 3> gratings{};
    for (auto& g : gratings) {
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double freq = rng.uniform(1.5, 5.0) * 2.0 * std::numbers::pi / sz;
        g = {freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi),
             rng.uniform(0.02, 0.06)};
    }

    // Body: the same ellipse for every class, randomized position and scale.
    const double cx = rng.uniform(0.38, 0.62) * sz;
    const double cy = rng.uniform(0.38, 0.62) * sz;
    const double rx = rng.uniform(0.16, 0.22) * sz;
    const double ry = rng.uniform(0.11, 0.15) * sz;
    std::array<double, 3> body{0.62, 0.52, 0.40};
    for (double& b : body) {
        b += rng.uniform(-0.06, 0.06);
    }

    // Discriminative part on the upper boundary of the body.
    const GlyphDescriptor glyph = glyph_for_class(label, spec.num_classes);
    const double theta = rng.uniform(200.0, 340.0) * kDegree;
    const double px = cx + rx * std::cos(theta);
    const double py = cy + ry * std::sin(theta);
    const double pr = rng.uniform(0.09, 0.12) * sz;
    std::array<double, 3> part = glyph.color;
    for (double& p : part) {
        p += rng.uniform(-0.03, 0.03);
    }

    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            const double fx = static_cast<double>(x), fy = static_cast<double>(y);
            double texture = 0.0;
            for (const auto& g : gratings) {
                texture += g.amp * std::sin(g.fx * fx + g.fy * fy + g.phase);
            }
            std::array<double, 3> rgb{};
            for (std::size_t c = 0; c < 3; ++c) {
                rgb[c] = tint[c] + texture + 0.05 * rng.normal();
            }
            const double ex = (fx - cx) / rx, ey = (fy - cy) / ry;
            const bool in_body = ex * ex + ey * ey <= 1.0;
            const bool in_part = inside_glyph(glyph.shape, fx - px, fy - py, pr);
            if (in_body) {
                const double shade = -0.06 * ey;
                for (std::size_t c = 0; c < 3; ++c) {
                    rgb[c] = body[c] + shade + 0.02 * rng.normal();
                }
            }
            if (in_part) {
                for (std::size_t c = 0; c < 3; ++c) {
                    rgb[c] = part[c] + 0.02 * rng.normal();
                }
            }
            for (std::size_t c = 0; c < 3; ++c) {
                out.image.at(c, y, x) = quantize(rgb[c]);
            }
            out.mask.at(y, x) = (in_body || in_part) ? 1.0 : 0.0;
            out.part_mask.at(y, x) = in_part ? 1.0 : 0.0;
        }
    }
    return out;
}

Tensor mask_from_image(const Image8& img)
{
    Tensor mask(Shape{img.height, img.width});
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = img.pixels[i] != 0 ? 1.0 : 0.0;
    }
    return mask;
}

Tensor image_from_rgb(const Image8& img)
{
    Tensor t(Shape{3, img.height, img.width});
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                t.at(c, y, x) = img.pixels[(y * img.width + x) * 3 + c] / 255.0;
            }
        }
    }
    return t;
}

Image8 rgb_from_image(const Tensor& image)
{
    Image8 img;
    img.height = image.dim(1);
    img.width = image.dim(2);
    img.channels = 3;
    img.pixels.resize(img.width * img.height * 3);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                img.pixels[(y * img.width + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0));
            }
        }
    }
    return img;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories)
{
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (directories ? entry.is_directory() : (entry.is_regular_file() && entry.path().extension() == ".png")) {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

GlyphDescriptor glyph_for_class(std::size_t label, std::size_t num_classes)
{
    constexpr std::size_t shape_count = 8;
    GlyphDescriptor g;
    g.shape = static_cast<GlyphShape>(label % shape_count);
    const double hue = 15.0 + 360.0 * static_cast<double>(label) / static_cast<double>(std::max<std::size_t>(1, num_classes));
    g.color = hsv_to_rgb(hue, 0.85, 0.92);
    return g;
}

Dataset generate(const DatasetSpec& spec)
{
    spec.validate();
    auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(spec.per_class) * spec.train_fraction));
    n_train = std::clamp<std::size_t>(n_train, 1, spec.per_class - 1);
    Dataset data;
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            Sample sample = render_sample(spec, k, i);
            (i < n_train ? data.train : data.test).push_back(std::move(sample));
        }
    }
    return data;
}

std::vector<Sample> load_folder(const fs::path& root, std::size_t image_size)
{
    if (!fs::is_directory(root)) {
        throw std::runtime_error("load_folder: '" + root.string() + "' is not a directory");
    }
    std::vector<Sample> out;
    std::size_t label = 0;
    for (const fs::path& class_dir : sorted_entries(root, true)) {
        const std::string cname = class_dir.filename().string();
        if (cname == "masks") {
            continue;
        }
        const auto files = sorted_entries(class_dir, false);
        if (files.empty()) {
            throw std::runtime_error("load_folder: class directory '" + class_dir.string() + "' has no PNG images");
        }
        for (const fs::path& file : files) {
            Sample s;
            s.label = label;
            s.id = file.stem().string();
            Tensor image = image_from_rgb(read_png(file, 3));
            const fs::path mask_path = root / "masks" / cname / file.filename();
            Tensor mask;
            if (fs::exists(mask_path)) {
                mask = mask_from_image(read_png(mask_path, 1));
            } else {
                mask = Tensor(Shape{image.dim(1), image.dim(2)}, 1.0);
                s.mask_missing = true;
                std::cerr << "warning: no mask for " << file.string() << "; using an all-ones mask\n";
            }
            if (image.dim(1) != image_size || image.dim(2) != image_size) {
                image = resize_bilinear(image, image_size);
            }
            if (mask.dim(0) != image_size || mask.dim(1) != image_size) {
                Tensor resized = resize_bilinear(mask.reshaped(Shape{1, mask.dim(0), mask.dim(1)}), image_size);
                mask = Tensor(Shape{image_size, image_size});
                for (std::size_t i = 0; i < mask.size(); ++i) {
                    mask[i] = resized[i] >= 0.5 ? 1.0 : 0.0;
                }
            }
            s.image = std::move(image);
            s.mask = std::move(mask);
            out.push_back(std::move(s));
        }
        ++label;
    }
    if (out.empty()) {
        throw std::runtime_error("load_folder: no class directories under '" + root.string() + "'");
    }
    return out;
}

void write_folder(const fs::path& root, const std::vector<Sample>& samples, std::size_t num_classes)
{
    for (std::size_t k = 0; k < num_classes; ++k) {
        fs::create_directories(root / class_name(k));
        fs::create_directories(root / "masks" / class_name(k));
    }
    for (const Sample& s : samples) {
        const std::string cname = class_name(s.label);
        write_png(root / cname / (s.id + ".png"), rgb_from_image(s.image));
        Image8 mask;
        mask.width = s.mask.dim(1);
        mask.height = s.mask.dim(0);
        mask.channels = 1;
        mask.pixels.resize(s.mask.size());
        for (std::size_t i = 0; i < s.mask.size(); ++i) {
            mask.pixels[i] = s.mask[i] > 0.5 ? 255 : 0;
        }
        write_png(root / "masks" / cname / (s.id + ".png"), mask);
    }
}

void write_dataset(const fs::path& root, const Dataset& data, const DatasetSpec& spec)
{
    write_folder(root / "train", data.train, spec.num_classes);
    write_folder(root / "test", data.test, spec.num_classes);
    std::ofstream(root / "spec.txt") << spec.to_text();
}

AugmentParams draw_augment_params(Rng& rng)
{
    AugmentParams p;
    p.flip = rng.bernoulli(0.5);
    p.rotation_deg = rng.uniform(-15.0, 15.0);
    p.shear_deg = rng.uniform(-10.0, 10.0);
    return p;
}

Sample apply_augment(const Sample& sample, const AugmentParams& params)
{
    const std::size_t h = sample.image.dim(1), w = sample.image.dim(2);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double ct = std::cos(params.rotation_deg * kDegree);
    const double st = std::sin(params.rotation_deg * kDegree);
    const double sh = std::tan(params.shear_deg * kDegree);

    Sample out = sample;
    const bool has_part = !sample.part_mask.empty();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            // Inverse map: undo rotation, then undo the x-shear, then the flip.
            const double u = static_cast<double>(x) - cx, v = static_cast<double>(y) - cy;
            const double ru = ct * u + st * v;
            const double rv = -st * u + ct * v;
            double sx = (ru - sh * rv) + cx;
            const double sy = rv + cy;
            if (params.flip) {
                sx = static_cast<double>(w) - 1.0 - sx;
            }

            const double fx = std::clamp(sx, 0.0, static_cast<double>(w) - 1.0);
            const double fy = std::clamp(sy, 0.0, static_cast<double>(h) - 1.0);
            const auto x0 = static_cast<std::size_t>(std::floor(fx));
            const auto y0 = static_cast<std::size_t>(std::floor(fy));
            const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double v00 = sample.image.at(c, y0, x0), v01 = sample.image.at(c, y0, x1);
                const double v10 = sample.image.at(c, y1, x0), v11 = sample.image.at(c, y1, x1);
                const double top = v00 * (1.0 - ax) + v01 * ax;
                const double bottom = v10 * (1.0 - ax) + v11 * ax;
                out.image.at(c, y, x) = std::clamp(top * (1.0 - ay) + bottom * ay, 0.0, 1.0);
            }

            const double nx = std::round(sx), ny = std::round(sy);
            const bool inside = nx >= 0.0 && ny >= 0.0 && nx <= static_cast<double>(w) - 1.0 &&
                                ny <= static_cast<double>(h) - 1.0;
            const auto ix = inside ? static_cast<std::size_t>(nx) : 0;
            const auto iy = inside ? static_cast<std::size_t>(ny) : 0;
            out.mask.at(y, x) = inside ? sample.mask.at(iy, ix) : 0.0;
            if (has_part) {
                out.part_mask.at(y, x) = inside ? sample.part_mask.at(iy, ix) : 0.0;
            }
        }
    }
    return out;
}

Sample augment(const Sample& sample, Rng& rng)
{
    return apply_augment(sample, draw_augment_params(rng));
}

Tensor resize_bilinear(const Tensor& image, std::size_t size)
{
    const std::size_t channels = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(Shape{channels, size, size});
    const double scale_y = static_cast<double>(h) / static_cast<double>(size);
    const double scale_x = static_cast<double>(w) / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * scale_y - 0.5, 0.0, static_cast<double>(h) - 1.0);
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double ay = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < size; ++x) {
            const double fx =
                std::clamp((static_cast<double>(x) + 0.5) * scale_x - 0.5, 0.0, static_cast<double>(w) - 1.0);
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double ax = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < channels; ++c) {
                const double top = image.at(c, y0, x0) * (1.0 - ax) + image.at(c, y0, x1) * ax;
                const double bottom = image.at(c, y1, x0) * (1.0 - ax) + image.at(c, y1, x1) * ax;
                out.at(c, y, x) = top * (1.0 - ay) + bottom * ay;
            }
        }
    }
    return out;
}

} // namespace protosolo
