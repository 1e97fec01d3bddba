#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cipl/augment.hpp"
#include "cipl/image.hpp"
#include "cipl/rng.hpp"

namespace cipl {

enum class GlyphKind { Disc, Cross, Ring, Stripes };

const char* glyph_kind_name(GlyphKind k);
GlyphKind glyph_kind_from_name(const std::string& name);

struct GlyphSpec {
    int class_id = 0;
    GlyphKind kind = GlyphKind::Disc;
    float intensity_lo = 0.7f;
    float intensity_hi = 0.9f;
    int size_min = 12;
    int size_max = 18;
};

struct LabeledSample {
    Image image;
    std::vector<int> labels;                  // C bits
    std::vector<std::pair<int, Box>> boxes;   // (class, box), one per positive class
};

struct DatasetConfig {
    std::uint64_t seed = 1;
    int n_samples = 100;
    int num_classes = 4;
    int image_size = 64;
    int channels = 1;
    double label_prob = 0.35;  // independent per-class positive probability
    bool single_label = false;
    int glyph_min = 12;
    int glyph_max = 18;
};

struct Dataset {
    DatasetConfig cfg;
    std::vector<GlyphSpec> glyphs;
    std::vector<LabeledSample> samples;
};

// One glyph kind per class, pairwise distinct; limits C to the kinds defined.
std::vector<GlyphSpec> default_glyphs(int num_classes, int size_min, int size_max);

// Reproducible from seed; per-sample streams derive from (seed, index).
// Custom glyph specs override the defaults (kinds must stay pairwise
// distinct); used for low-contrast or resized variants of the task.
Dataset generate_dataset(const DatasetConfig& cfg,
                         const std::vector<GlyphSpec>* glyphs = nullptr);

// Uniform over unordered pairs sharing at least one positive label.
class PairSampler {
public:
    explicit PairSampler(const std::vector<std::vector<int>>& labels);
    std::pair<int, int> sample(Rng& rng) const;
    bool has_pairs() const { return max_partners_ > 0; }

private:
    int n_ = 0;
    std::vector<std::uint64_t> masks_;
    std::vector<std::vector<int>> buckets_;       // per class: sample indices
    std::vector<int> partner_count_;
    int max_partners_ = 0;
};

// Directory layout: {index}.pgm|.ppm, labels.csv, boxes.csv, manifest.json.
void write_dataset(const Dataset& ds, const std::string& dir, bool force);
Dataset load_dataset(const std::string& dir);

}  // namespace cipl
