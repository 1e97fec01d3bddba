#include "cipl/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cipl/error.hpp"

namespace fs = std::filesystem;

namespace cipl {

const char* glyph_kind_name(GlyphKind k) {
    switch (k) {
        case GlyphKind::Disc: return "disc";
        case GlyphKind::Cross: return "cross";
        case GlyphKind::Ring: return "ring";
        default: return "stripes";
    }
}

GlyphKind glyph_kind_from_name(const std::string& name) {
    if (name == "disc") return GlyphKind::Disc;
    if (name == "cross") return GlyphKind::Cross;
    if (name == "ring") return GlyphKind::Ring;
    if (name == "stripes") return GlyphKind::Stripes;
    throw ConfigError("unknown glyph kind '" + name + "'");
}

std::vector<GlyphSpec> default_glyphs(int num_classes, int size_min, int size_max) {
    const GlyphKind kinds[] = {GlyphKind::Disc, GlyphKind::Cross, GlyphKind::Ring,
                               GlyphKind::Stripes};
    const float bands[][2] = {{0.70f, 0.85f}, {0.72f, 0.88f}, {0.70f, 0.86f}, {0.75f, 0.92f}};
    if (num_classes < 2 || num_classes > 4)
        throw ConfigError("glyph kinds must be pairwise distinct; supported class count is 2..4, got " +
                          std::to_string(num_classes));
    std::vector<GlyphSpec> out;
    for (int c = 0; c < num_classes; ++c)
        out.push_back({c, kinds[c], bands[c][0], bands[c][1], size_min, size_max});
    return out;
}

namespace {

void render_background(Image& img, Rng& rng) {
    const int grid = std::max(4, img.height / 8);
    std::vector<float> coarse(static_cast<size_t>(grid) * grid);
    for (auto& v : coarse) v = static_cast<float>(rng.uniform(0.15, 0.45));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double gy = static_cast<double>(y) / img.height * (grid - 1);
            const double gx = static_cast<double>(x) / img.width * (grid - 1);
            const int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
            const int y1 = std::min(y0 + 1, grid - 1), x1 = std::min(x0 + 1, grid - 1);
            const double fy = gy - y0, fx = gx - x0;
            const double v = (coarse[y0 * grid + x0] * (1 - fx) + coarse[y0 * grid + x1] * fx) * (1 - fy) +
                             (coarse[y1 * grid + x0] * (1 - fx) + coarse[y1 * grid + x1] * fx) * fy;
            const float noise = static_cast<float>(rng.uniform(-0.04, 0.04));
            for (int c = 0; c < img.channels; ++c)
                img.at(y, x, c) = std::clamp(static_cast<float>(v) + noise, 0.0f, 1.0f);
        }
}

void put_pixel(Image& img, int y, int x, float v) {
    for (int c = 0; c < img.channels; ++c) img.at(y, x, c) = v;
}

void render_glyph(Image& img, const GlyphSpec& spec, const Box& box, float intensity, Rng& rng) {
    const int d = box.w;
    const double cx = box.x + (d - 1) / 2.0, cy = box.y + (d - 1) / 2.0;
    const double r = d / 2.0;
    for (int y = box.y; y < box.y + d; ++y)
        for (int x = box.x; x < box.x + d; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double dist = std::sqrt(dx * dx + dy * dy);
            bool on = false;
            switch (spec.kind) {
                case GlyphKind::Disc:
                    on = dist <= r;
                    break;
                case GlyphKind::Cross: {
                    const int t = std::max(2, d / 3);
                    on = std::abs(dy) <= t / 2.0 || std::abs(dx) <= t / 2.0;
                    break;
                }
                case GlyphKind::Ring:
                    on = dist <= r && dist >= 0.55 * r;
                    break;
                case GlyphKind::Stripes: {
                    const int period = std::max(2, d / 5);
                    on = ((y - box.y) / (period / 2 > 0 ? period / 2 : 1)) % 2 == 0;
                    break;
                }
            }
            if (on) {
                const float jitter = static_cast<float>(rng.uniform(-0.03, 0.03));
                put_pixel(img, y, x, std::clamp(intensity + jitter, 0.0f, 1.0f));
            }
        }
}

bool boxes_intersect(const Box& a, const Box& b) {
    return a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h;
}

std::vector<int> draw_labels(const DatasetConfig& cfg, Rng& rng) {
    std::vector<int> y(cfg.num_classes, 0);
    std::vector<int> positives;
    for (int c = 0; c < cfg.num_classes; ++c)
        if (rng.bernoulli(cfg.label_prob)) {
            y[c] = 1;
            positives.push_back(c);
        }
    if (cfg.single_label && positives.size() > 1) {
        const int keep = positives[rng.uniform_int(static_cast<int>(positives.size()))];
        std::fill(y.begin(), y.end(), 0);
        y[keep] = 1;
    }
    return y;
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& cfg, const std::vector<GlyphSpec>* glyphs) {
    if (cfg.num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
    if (cfg.n_samples < 1) throw ConfigError("dataset needs at least 1 sample");
    if (cfg.glyph_max + 4 > cfg.image_size)
        throw ConfigError("glyph max size " + std::to_string(cfg.glyph_max) +
                          " does not fit image extent " + std::to_string(cfg.image_size));
    Dataset ds;
    ds.cfg = cfg;
    ds.glyphs = glyphs ? *glyphs : default_glyphs(cfg.num_classes, cfg.glyph_min, cfg.glyph_max);
    if (ds.glyphs.size() != static_cast<size_t>(cfg.num_classes))
        throw ConfigError("glyph spec count does not match the class count");
    ds.samples.reserve(static_cast<size_t>(cfg.n_samples));

    for (int i = 0; i < cfg.n_samples; ++i) {
        Rng rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(i)));
        LabeledSample s;
        s.image = Image(cfg.image_size, cfg.image_size, cfg.channels);
        render_background(s.image, rng);
        s.labels = draw_labels(cfg, rng);

        // choose all boxes first (whole-layout redraw on dead ends), then render
        std::vector<int> positives;
        for (int c = 0; c < cfg.num_classes; ++c)
            if (s.labels[static_cast<size_t>(c)]) positives.push_back(c);
        for (int layout = 0; !positives.empty(); ++layout) {
            if (layout >= 20)
                throw GenerationError("could not place glyphs for sample " + std::to_string(i) +
                                      " in 20 layout attempts");
            s.boxes.clear();
            bool ok = true;
            for (int c : positives) {
                const GlyphSpec& spec = ds.glyphs[static_cast<size_t>(c)];
                const int d = spec.size_min + rng.uniform_int(spec.size_max - spec.size_min + 1);
                const int span = cfg.image_size - d - 4 + 1;
                Box box;
                bool placed = false;
                for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
                    box = Box{2 + rng.uniform_int(span), 2 + rng.uniform_int(span), d, d};
                    placed = std::none_of(s.boxes.begin(), s.boxes.end(), [&](const auto& e) {
                        return boxes_intersect(e.second, box);
                    });
                }
                if (!placed) {
                    // exhausted random retries: enumerate what is still free
                    std::vector<std::pair<int, int>> valid;
                    for (int y = 2; y < 2 + span; ++y)
                        for (int x = 2; x < 2 + span; ++x) {
                            const Box cand{x, y, d, d};
                            if (std::none_of(s.boxes.begin(), s.boxes.end(), [&](const auto& e) {
                                    return boxes_intersect(e.second, cand);
                                }))
                                valid.emplace_back(x, y);
                        }
                    if (valid.empty()) {
                        ok = false;  // dead end, redraw the whole layout
                        break;
                    }
                    const auto [x, y] = valid[static_cast<size_t>(
                        rng.uniform_int(static_cast<int>(valid.size())))];
                    box = Box{x, y, d, d};
                }
                s.boxes.emplace_back(c, box);
            }
            if (ok) break;
        }
        for (const auto& [c, box] : s.boxes) {
            const GlyphSpec& spec = ds.glyphs[static_cast<size_t>(c)];
            const float intensity =
                static_cast<float>(rng.uniform(spec.intensity_lo, spec.intensity_hi));
            render_glyph(s.image, spec, box, intensity, rng);
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

PairSampler::PairSampler(const std::vector<std::vector<int>>& labels) {
    n_ = static_cast<int>(labels.size());
    if (n_ < 2) throw SamplingError("pair sampling needs at least 2 samples");
    const int C = static_cast<int>(labels[0].size());
    masks_.assign(static_cast<size_t>(n_), 0);
    buckets_.assign(static_cast<size_t>(C), {});
    for (int i = 0; i < n_; ++i) {
        for (int c = 0; c < C; ++c)
            if (labels[static_cast<size_t>(i)][static_cast<size_t>(c)]) {
                masks_[static_cast<size_t>(i)] |= (1ULL << c);
                buckets_[static_cast<size_t>(c)].push_back(i);
            }
    }
    partner_count_.assign(static_cast<size_t>(n_), 0);
    for (int i = 0; i < n_; ++i) {
        if (!masks_[static_cast<size_t>(i)]) continue;
        int cnt = 0;
        for (int j = 0; j < n_; ++j)
            if (j != i && (masks_[static_cast<size_t>(i)] & masks_[static_cast<size_t>(j)])) ++cnt;
        partner_count_[static_cast<size_t>(i)] = cnt;
        max_partners_ = std::max(max_partners_, cnt);
    }
}

std::pair<int, int> PairSampler::sample(Rng& rng) const {
    if (max_partners_ == 0)
        throw SamplingError("no two samples share a label; cannot form a training pair");
    for (int iter = 0; iter < 1000000; ++iter) {
        const int a = rng.uniform_int(n_);
        const int ca = partner_count_[static_cast<size_t>(a)];
        if (ca == 0) continue;
        if (rng.uniform_int(max_partners_) >= ca) continue;  // thin by partner count
        // propose b from the multiset union of a's class buckets, then accept
        // with probability 1/|shared classes| so every partner is uniform
        int total = 0;
        for (int c = 0; c < static_cast<int>(buckets_.size()); ++c)
            if (masks_[static_cast<size_t>(a)] & (1ULL << c))
                total += static_cast<int>(buckets_[static_cast<size_t>(c)].size());
        while (true) {
            int r = rng.uniform_int(total);
            int b = -1;
            for (int c = 0; c < static_cast<int>(buckets_.size()); ++c) {
                if (!(masks_[static_cast<size_t>(a)] & (1ULL << c))) continue;
                const int sz = static_cast<int>(buckets_[static_cast<size_t>(c)].size());
                if (r < sz) {
                    b = buckets_[static_cast<size_t>(c)][static_cast<size_t>(r)];
                    break;
                }
                r -= sz;
            }
            if (b == a) continue;
            const int shared = __builtin_popcountll(masks_[static_cast<size_t>(a)] &
                                                    masks_[static_cast<size_t>(b)]);
            if (rng.uniform_int(shared) == 0) return {a, b};
        }
    }
    throw SamplingError("pair sampling failed to converge");
}

void write_dataset(const Dataset& ds, const std::string& dir, bool force) {
    const fs::path root(dir);
    if (fs::exists(root)) {
        if (!fs::is_directory(root)) throw IoError(dir + " exists and is not a directory");
        if (!fs::is_empty(root) && !force)
            throw IoError(dir + " is not empty; pass force to overwrite");
    } else {
        if (!root.parent_path().empty() && !fs::exists(root.parent_path()))
            throw IoError("parent directory " + root.parent_path().string() + " does not exist");
        fs::create_directory(root);
    }

    std::ofstream labels(root / "labels.csv");
    std::ofstream boxes(root / "boxes.csv");
    if (!labels || !boxes) throw IoError("cannot create metadata files in " + dir);
    int all_negative = 0, multi_label = 0;
    const char* ext = ds.cfg.channels == 3 ? ".ppm" : ".pgm";
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        write_image(s.image, (root / (std::to_string(i) + ext)).string());
        labels << i;
        int pos = 0;
        for (int b : s.labels) {
            labels << "," << b;
            pos += b;
        }
        labels << "\n";
        all_negative += pos == 0;
        multi_label += pos > 1;
        for (const auto& [cls, box] : s.boxes)
            boxes << i << "," << cls << "," << box.x << "," << box.y << "," << box.w << ","
                  << box.h << "\n";
    }

    nlohmann::json manifest;
    manifest["seed"] = ds.cfg.seed;
    manifest["n_samples"] = ds.cfg.n_samples;
    manifest["num_classes"] = ds.cfg.num_classes;
    manifest["image_size"] = ds.cfg.image_size;
    manifest["channels"] = ds.cfg.channels;
    manifest["label_prob"] = ds.cfg.label_prob;
    manifest["single_label"] = ds.cfg.single_label;
    nlohmann::json glyphs = nlohmann::json::array();
    for (const auto& g : ds.glyphs)
        glyphs.push_back({{"class", g.class_id},
                          {"kind", glyph_kind_name(g.kind)},
                          {"intensity", {g.intensity_lo, g.intensity_hi}},
                          {"size", {g.size_min, g.size_max}}});
    manifest["glyphs"] = glyphs;
    manifest["counts"] = {{"samples", ds.samples.size()},
                          {"all_negative", all_negative},
                          {"multi_label", multi_label}};
    std::ofstream mf(root / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw IoError("cannot write manifest.json in " + dir);
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream mf(root / "manifest.json");
    if (!mf) throw IoError("missing manifest.json in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(dir + "/manifest.json: " + e.what());
    }
    Dataset ds;
    ds.cfg.seed = manifest.at("seed").get<std::uint64_t>();
    ds.cfg.n_samples = manifest.at("n_samples").get<int>();
    ds.cfg.num_classes = manifest.at("num_classes").get<int>();
    ds.cfg.image_size = manifest.at("image_size").get<int>();
    ds.cfg.channels = manifest.at("channels").get<int>();
    ds.cfg.label_prob = manifest.at("label_prob").get<double>();
    ds.cfg.single_label = manifest.at("single_label").get<bool>();
    for (const auto& g : manifest.at("glyphs")) {
        GlyphSpec spec;
        spec.class_id = g.at("class").get<int>();
        spec.kind = glyph_kind_from_name(g.at("kind").get<std::string>());
        spec.intensity_lo = g.at("intensity")[0].get<float>();
        spec.intensity_hi = g.at("intensity")[1].get<float>();
        spec.size_min = g.at("size")[0].get<int>();
        spec.size_max = g.at("size")[1].get<int>();
        ds.glyphs.push_back(spec);
    }

    ds.samples.resize(static_cast<size_t>(ds.cfg.n_samples));
    const char* ext = ds.cfg.channels == 3 ? ".ppm" : ".pgm";
    for (int i = 0; i < ds.cfg.n_samples; ++i) {
        auto& s = ds.samples[static_cast<size_t>(i)];
        s.image = read_image((root / (std::to_string(i) + ext)).string());
        s.labels.assign(static_cast<size_t>(ds.cfg.num_classes), 0);
    }

    std::ifstream labels(root / "labels.csv");
    if (!labels) throw IoError("missing labels.csv in " + dir);
    std::string line;
    while (std::getline(labels, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tok;
        std::getline(ls, tok, ',');
        const int idx = std::stoi(tok);
        if (idx < 0 || idx >= ds.cfg.n_samples) throw IoError("labels.csv index out of range");
        for (int c = 0; c < ds.cfg.num_classes; ++c) {
            std::getline(ls, tok, ',');
            ds.samples[static_cast<size_t>(idx)].labels[static_cast<size_t>(c)] = std::stoi(tok);
        }
    }

    std::ifstream boxes(root / "boxes.csv");
    if (!boxes) throw IoError("missing boxes.csv in " + dir);
    while (std::getline(boxes, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tok;
        int vals[6];
        for (int k = 0; k < 6; ++k) {
            std::getline(ls, tok, ',');
            vals[k] = std::stoi(tok);
        }
        if (vals[0] < 0 || vals[0] >= ds.cfg.n_samples) throw IoError("boxes.csv index out of range");
        ds.samples[static_cast<size_t>(vals[0])].boxes.emplace_back(
            vals[1], Box{vals[2], vals[3], vals[4], vals[5]});
    }
    return ds;
}

}  // namespace cipl
