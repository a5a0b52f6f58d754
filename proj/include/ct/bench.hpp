#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ct/errors.hpp"
#include "ct/nets.hpp"

namespace ct {

// Bank of p x p glyph templates. Templates are binary patterns regenerated
// until every pairwise Pearson correlation stays below 0.5.
struct GlyphBank {
    int cell = 0;
    std::vector<std::vector<double>> templates;

    static GlyphBank generate(int num_glyphs, int cell, std::uint64_t seed);
    double pairwise_correlation(int a, int b) const;
};

// Layout of the glyph bank:
//   [0, pretrain_classes)                       class-signature glyphs
//   [pretrain_classes, +downstream_classes)     rare glyphs, one per downstream class
//   last                                        glyph B of the spurious pair
// Glyph A of the pair is the signature glyph of `spurious_class`, so that in
// pretrain class c' the pair (A, B) co-occurs at spurious_strength.
struct PlantedConfig {
    int grid = 6;
    int cell = 5;
    int pretrain_classes = 8;
    int downstream_classes = 4;
    double rare_rate = 0.02;        // probability a pretrain image carries a rare glyph
    double rare_contrast = 0.5;     // brightness of rare glyphs relative to the others
    int spurious_class = 0;         // c'
    double spurious_strength = 0.95;  // P(B | A, class c') in pretraining
    double spurious_base = 0.05;      // P(B | A, other classes) in pretraining
    double downstream_b_rate = 0.3;   // fraction of downstream images containing B
    int signature_cells = 3;
    int distractor_cells = 4;
    int pretrain_size = 6000;
    int train_size = 800;
    int test_size = 800;
    double noise_sigma = 0.1;
    std::uint64_t seed = 0;

    int glyph_a() const { return spurious_class; }
    int glyph_b() const { return pretrain_classes + downstream_classes; }
    int rare_glyph_id(int downstream_class) const { return pretrain_classes + downstream_class; }
    int num_glyphs() const { return pretrain_classes + downstream_classes + 1; }
    GridGeometry geometry() const { return GridGeometry{grid, cell}; }

    void validate() const;
};

struct Example {
    std::vector<double> pixels;  // side*side, row-major, in [0, 1]
    int label = 0;
    int rare_glyph = -1;  // downstream-class identity of the planted rare glyph
    int rare_cell = -1;   // grid position of the rare glyph
    bool has_a = false;
    bool has_b = false;
};

struct Dataset {
    std::string split;
    int num_classes = 0;
    std::vector<Example> examples;
};

struct PlantedData {
    PlantedConfig config;
    Dataset pretrain;
    Dataset train;
    Dataset test;
};

// Deterministic given config.seed; every example derives its own stream from
// (seed, split, index).
PlantedData generate_planted(const PlantedConfig& config);

// Empirical checks of the planted construction: rare-glyph frequency,
// conditional B|A rates, downstream balance, and a chi-square test that
// rare-glyph identity is independent of the pretrain label.
struct AuditStat {
    std::string name;
    double observed = 0.0;
    double expected = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    long support = 0;  // sample count behind the estimate
    bool ok = false;
};

struct AuditReport {
    std::vector<AuditStat> stats;
    double chi_square = 0.0;
    double chi_square_critical = 0.0;
    long chi_square_df = 0;
    bool chi_square_ok = false;
    bool all_ok = false;

    std::string to_string() const;
};

AuditReport audit(const PlantedData& data);

// Upper bound on the 99th percentile of chi-square with df degrees of
// freedom (Wilson-Hilferty approximation).
double chi_square_critical_99(long df);

// Binary dataset container; round-trips bit-exactly.
void save_planted(const std::string& path, const PlantedData& data);
PlantedData load_planted(const std::string& path);

std::string planted_config_to_json(const PlantedConfig& config);
PlantedConfig planted_config_from_json(const std::string& text);

}  // namespace ct
