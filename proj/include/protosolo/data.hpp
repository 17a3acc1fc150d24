#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protosolo/rng.hpp"
#include "protosolo/tensor.hpp"

namespace protosolo {

struct DatasetSpec {
    std::size_t num_classes = 4;
    std::size_t per_class = 60;
    std::size_t image_size = 64;
    std::uint64_t seed = 7;
    double train_fraction = 0.8;

    static constexpr std::size_t min_image_size = 32;

    void validate() const;
    /// `key = value` lines, one per field.
    std::string to_text() const;
};

struct Sample {
    Tensor image;         // [3,S,S], values in [0,1]
    std::size_t label = 0;
    Tensor mask;          // [S,S], 1 on foreground
    std::string id;
    bool mask_missing = false;
    Tensor part_mask;     // [S,S] discriminative part only; empty when unknown
};

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
};

enum class GlyphShape { disk, square, triangle, cross, diamond, ring, bar, chevron };

/// The class-unique discriminative part: a glyph shape and an RGB color.
struct GlyphDescriptor {
    GlyphShape shape = GlyphShape::disk;
    std::array<double, 3> color{};

    friend bool operator==(const GlyphDescriptor&, const GlyphDescriptor&) = default;
};

GlyphDescriptor glyph_for_class(std::size_t label, std::size_t num_classes);

/// Deterministic synthetic dataset; a stratified split by class.
Dataset generate(const DatasetSpec& spec);

std::string class_name(std::size_t label);

/// Reads `root/<class>/<id>.png` with optional masks at `root/masks/<class>/<id>.png`.
/// Classes are labelled in lexicographic directory order.
std::vector<Sample> load_folder(const std::filesystem::path& root, std::size_t image_size);

/// Writes samples in the layout load_folder reads (creating directories as needed).
void write_folder(const std::filesystem::path& root, const std::vector<Sample>& samples,
                  std::size_t num_classes);

/// Writes `root/train`, `root/test` and `root/spec.txt`.
void write_dataset(const std::filesystem::path& root, const Dataset& data, const DatasetSpec& spec);

struct AugmentParams {
    bool flip = false;
    double rotation_deg = 0.0; // [-15, 15]
    double shear_deg = 0.0;    // [-10, 10]
};

AugmentParams draw_augment_params(Rng& rng);
Sample apply_augment(const Sample& sample, const AugmentParams& params);
/// Horizontal flip with probability 0.5, rotation and shear; image and masks share the transform.
Sample augment(const Sample& sample, Rng& rng);

/// Bilinear resampling of a [C,H,W] tensor to [C,size,size] (pixel-center aligned).
Tensor resize_bilinear(const Tensor& image, std::size_t size);

} // namespace protosolo
