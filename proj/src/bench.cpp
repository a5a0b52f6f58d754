#include "ct/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "ct/io.hpp"
#include "ct/rng.hpp"

namespace ct {

namespace {

constexpr double kZ99 = 2.5758293035489004;  // two-sided 99% normal quantile

double clip01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

GlyphBank GlyphBank::generate(int num_glyphs, int cell, std::uint64_t seed) {
    if (num_glyphs < 2 || cell < 2) throw ConfigError("GlyphBank: need >= 2 glyphs of >= 2x2");
    const int dim = cell * cell;
    for (std::uint64_t attempt = 0;; ++attempt) {
        auto rng = make_rng(seed, RngStream::kGlyphBank, attempt);
        std::uniform_int_distribution<int> bit(0, 1);
        GlyphBank bank;
        bank.cell = cell;
        bank.templates.assign(num_glyphs, std::vector<double>(dim, 0.0));
        bool degenerate = false;
        for (auto& t : bank.templates) {
            int ones = 0;
            for (auto& v : t) {
                v = static_cast<double>(bit(rng));
                ones += v > 0.5;
            }
            if (ones == 0 || ones == dim) degenerate = true;
        }
        if (degenerate) continue;
        bool correlated = false;
        for (int a = 0; a < num_glyphs && !correlated; ++a) {
            for (int b = a + 1; b < num_glyphs && !correlated; ++b) {
                if (std::abs(bank.pairwise_correlation(a, b)) >= 0.5) correlated = true;
            }
        }
        if (!correlated) return bank;
    }
}

double GlyphBank::pairwise_correlation(int a, int b) const {
    const auto& x = templates[a];
    const auto& y = templates[b];
    const int n = static_cast<int>(x.size());
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (int i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

void PlantedConfig::validate() const {
    if (grid < 2 || cell < 2) throw ConfigError("PlantedConfig: grid and cell must be >= 2");
    if (pretrain_classes < 2) throw ConfigError("PlantedConfig: need >= 2 pretrain classes");
    if (downstream_classes < 2) throw ConfigError("PlantedConfig: need >= 2 downstream classes");
    if (rare_rate < 0.0 || rare_rate > 0.05) {
        throw ConfigError("PlantedConfig: rare_rate must lie in [0, 0.05]");
    }
    if (rare_contrast <= 0.0 || rare_contrast > 1.0) {
        throw ConfigError("PlantedConfig: rare_contrast must lie in (0, 1]");
    }
    if (spurious_strength < 0.8 || spurious_strength > 1.0) {
        throw ConfigError("PlantedConfig: spurious_strength must lie in [0.8, 1.0]");
    }
    if (spurious_base < 0.0 || spurious_base > 1.0 || downstream_b_rate < 0.0 ||
        downstream_b_rate > 1.0) {
        throw ConfigError("PlantedConfig: probabilities must lie in [0, 1]");
    }
    if (spurious_class < 0 || spurious_class >= pretrain_classes) {
        throw ConfigError("PlantedConfig: spurious_class out of range");
    }
    if (signature_cells < 1 || distractor_cells < 0) {
        throw ConfigError("PlantedConfig: cell counts invalid");
    }
    // Every image must fit signatures, distractors, B and a rare glyph.
    if (signature_cells + distractor_cells + 2 > grid * grid) {
        throw ConfigError("PlantedConfig: glyph cells exceed the grid");
    }
    if (pretrain_size <= 0 || train_size <= 0 || test_size <= 0) {
        throw ConfigError("PlantedConfig: dataset sizes must be positive");
    }
    if (noise_sigma < 0.0) throw ConfigError("PlantedConfig: noise_sigma must be >= 0");
}

namespace {

struct Stamper {
    const GlyphBank& bank;
    const PlantedConfig& cfg;
    std::mt19937_64& rng;
    Example& ex;
    std::vector<char> used;
    std::normal_distribution<double> gauss{0.0, 1.0};

    Stamper(const GlyphBank& bank_in, const PlantedConfig& cfg_in, std::mt19937_64& rng_in,
            Example& ex_in)
        : bank(bank_in), cfg(cfg_in), rng(rng_in), ex(ex_in),
          used(cfg_in.grid * cfg_in.grid, 0) {
        const int side = cfg.grid * cfg.cell;
        ex.pixels.resize(static_cast<std::size_t>(side) * side);
        for (auto& v : ex.pixels) v = clip01(cfg.noise_sigma * gauss(rng));
    }

    int pick_free_cell() {
        int free_count = 0;
        for (char u : used) free_count += !u;
        if (free_count == 0) throw ConfigError("generate: no free cell left");
        std::uniform_int_distribution<int> pick(0, free_count - 1);
        int want = pick(rng);
        for (int c = 0; c < static_cast<int>(used.size()); ++c) {
            if (!used[c] && want-- == 0) {
                used[c] = 1;
                return c;
            }
        }
        throw ConfigError("generate: free-cell scan failed");
    }

    int stamp(int glyph_id, double contrast = 1.0) {
        const int pos = pick_free_cell();
        const int side = cfg.grid * cfg.cell;
        const int gy = pos / cfg.grid, gx = pos % cfg.grid;
        const auto& tpl = bank.templates[glyph_id];
        for (int i = 0; i < cfg.cell; ++i) {
            for (int j = 0; j < cfg.cell; ++j) {
                ex.pixels[static_cast<std::size_t>(gy * cfg.cell + i) * side + gx * cfg.cell + j] =
                    clip01(contrast * tpl[i * cfg.cell + j] + cfg.noise_sigma * gauss(rng));
            }
        }
        return pos;
    }
};

Example make_pretrain_example(const PlantedConfig& cfg, const GlyphBank& bank, int index) {
    auto rng = make_rng(cfg.seed, RngStream::kPretrainData, static_cast<std::uint64_t>(index));
    Example ex;
    ex.label = index % cfg.pretrain_classes;
    Stamper st(bank, cfg, rng, ex);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    for (int s = 0; s < cfg.signature_cells; ++s) st.stamp(ex.label);
    ex.has_a = ex.label == cfg.spurious_class;
    for (int d = 0; d < cfg.distractor_cells; ++d) {
        std::uniform_int_distribution<int> pick(0, cfg.pretrain_classes - 2);
        int cls = pick(rng);
        if (cls >= ex.label) ++cls;
        st.stamp(cls);
        if (cls == cfg.spurious_class) ex.has_a = true;
    }

    // Rare glyph: identity and placement independent of the pretrain label.
    if (uni(rng) < cfg.rare_rate) {
        std::uniform_int_distribution<int> pick(0, cfg.downstream_classes - 1);
        ex.rare_glyph = pick(rng);
        ex.rare_cell = st.stamp(cfg.rare_glyph_id(ex.rare_glyph), cfg.rare_contrast);
    }

    if (ex.has_a) {
        const double p_b = ex.label == cfg.spurious_class ? cfg.spurious_strength
                                                          : cfg.spurious_base;
        if (uni(rng) < p_b) {
            st.stamp(cfg.glyph_b());
            ex.has_b = true;
        }
    }
    return ex;
}

Example make_downstream_example(const PlantedConfig& cfg, const GlyphBank& bank, int label,
                                std::uint64_t stream_index) {
    auto rng = make_rng(cfg.seed, RngStream::kDownstreamData, stream_index);
    Example ex;
    ex.label = label;
    Stamper st(bank, cfg, rng, ex);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    // Pretrain signatures appear as label-independent distractors.
    for (int d = 0; d < cfg.distractor_cells; ++d) {
        std::uniform_int_distribution<int> pick(0, cfg.pretrain_classes - 1);
        const int cls = pick(rng);
        st.stamp(cls);
        if (cls == cfg.spurious_class) ex.has_a = true;
    }
    if (uni(rng) < cfg.downstream_b_rate) {
        st.stamp(cfg.glyph_b());
        ex.has_b = true;
    }
    ex.rare_glyph = label;
    ex.rare_cell = st.stamp(cfg.rare_glyph_id(label), cfg.rare_contrast);
    return ex;
}

}  // namespace

PlantedData generate_planted(const PlantedConfig& config) {
    config.validate();
    const GlyphBank bank = GlyphBank::generate(config.num_glyphs(), config.cell, config.seed);

    PlantedData out;
    out.config = config;
    out.pretrain.split = "pretrain";
    out.pretrain.num_classes = config.pretrain_classes;
    out.pretrain.examples.reserve(config.pretrain_size);
    for (int i = 0; i < config.pretrain_size; ++i) {
        out.pretrain.examples.push_back(make_pretrain_example(config, bank, i));
    }

    out.train.split = "train";
    out.train.num_classes = config.downstream_classes;
    out.train.examples.reserve(config.train_size);
    for (int i = 0; i < config.train_size; ++i) {
        out.train.examples.push_back(make_downstream_example(
            config, bank, i % config.downstream_classes, static_cast<std::uint64_t>(i)));
    }

    out.test.split = "test";
    out.test.num_classes = config.downstream_classes;
    out.test.examples.reserve(config.test_size);
    for (int i = 0; i < config.test_size; ++i) {
        out.test.examples.push_back(make_downstream_example(
            config, bank, i % config.downstream_classes,
            static_cast<std::uint64_t>(config.train_size + i)));
    }
    return out;
}

namespace {

AuditStat binomial_stat(const std::string& name, double observed, double expected, long n) {
    AuditStat s;
    s.name = name;
    s.observed = observed;
    s.expected = expected;
    s.support = n;
    const double sigma = n > 0 ? std::sqrt(expected * (1.0 - expected) / n) : 0.0;
    s.lo = std::max(0.0, expected - kZ99 * sigma);
    s.hi = std::min(1.0, expected + kZ99 * sigma);
    s.ok = n == 0 ? true : (observed >= s.lo && observed <= s.hi);
    return s;
}

}  // namespace

double chi_square_critical_99(long df) {
    if (df <= 0) return 0.0;
    const double z = 2.3263478740408408;  // one-sided 99% normal quantile
    const double d = static_cast<double>(df);
    const double t = 1.0 - 2.0 / (9.0 * d) + z * std::sqrt(2.0 / (9.0 * d));
    return d * t * t * t;
}

AuditReport audit(const PlantedData& data) {
    const PlantedConfig& cfg = data.config;
    AuditReport report;

    long rare_count = 0;
    long a_spur = 0, ab_spur = 0, a_other = 0, ab_other = 0;
    for (const auto& ex : data.pretrain.examples) {
        if (ex.rare_glyph >= 0) ++rare_count;
        if (ex.has_a) {
            if (ex.label == cfg.spurious_class) {
                ++a_spur;
                ab_spur += ex.has_b;
            } else {
                ++a_other;
                ab_other += ex.has_b;
            }
        }
    }
    const long n_pre = static_cast<long>(data.pretrain.examples.size());
    report.stats.push_back(binomial_stat("pretrain_rare_frequency",
                                         static_cast<double>(rare_count) / n_pre,
                                         cfg.rare_rate, n_pre));
    report.stats.push_back(binomial_stat(
        "p_b_given_a_spurious_class",
        a_spur > 0 ? static_cast<double>(ab_spur) / a_spur : 0.0, cfg.spurious_strength, a_spur));
    report.stats.push_back(binomial_stat(
        "p_b_given_a_other_classes",
        a_other > 0 ? static_cast<double>(ab_other) / a_other : 0.0, cfg.spurious_base, a_other));

    for (const Dataset* ds : {&data.train, &data.test}) {
        std::vector<long> counts(cfg.downstream_classes, 0);
        for (const auto& ex : ds->examples) ++counts[ex.label];
        const double n = static_cast<double>(ds->examples.size());
        double lo_share = 1.0, hi_share = 0.0;
        for (long c : counts) {
            lo_share = std::min(lo_share, c / n);
            hi_share = std::max(hi_share, c / n);
        }
        AuditStat s;
        s.name = ds->split + "_class_balance_spread";
        s.observed = hi_share - lo_share;
        s.expected = 0.0;
        s.lo = 0.0;
        s.hi = 0.02;
        s.support = static_cast<long>(ds->examples.size());
        s.ok = s.observed <= s.hi;
        report.stats.push_back(s);
    }

    // Chi-square independence of rare-glyph identity vs pretrain label.
    std::vector<long> table(static_cast<std::size_t>(cfg.downstream_classes) *
                            cfg.pretrain_classes, 0);
    long total = 0;
    for (const auto& ex : data.pretrain.examples) {
        if (ex.rare_glyph < 0) continue;
        ++table[static_cast<std::size_t>(ex.rare_glyph) * cfg.pretrain_classes + ex.label];
        ++total;
    }
    if (total > 0) {
        std::vector<long> row(cfg.downstream_classes, 0), col(cfg.pretrain_classes, 0);
        for (int r = 0; r < cfg.downstream_classes; ++r) {
            for (int c = 0; c < cfg.pretrain_classes; ++c) {
                row[r] += table[static_cast<std::size_t>(r) * cfg.pretrain_classes + c];
                col[c] += table[static_cast<std::size_t>(r) * cfg.pretrain_classes + c];
            }
        }
        double chi = 0.0;
        int nz_rows = 0, nz_cols = 0;
        for (long v : row) nz_rows += v > 0;
        for (long v : col) nz_cols += v > 0;
        for (int r = 0; r < cfg.downstream_classes; ++r) {
            for (int c = 0; c < cfg.pretrain_classes; ++c) {
                if (row[r] == 0 || col[c] == 0) continue;
                const double e = static_cast<double>(row[r]) * col[c] / total;
                const double o = static_cast<double>(
                    table[static_cast<std::size_t>(r) * cfg.pretrain_classes + c]);
                chi += (o - e) * (o - e) / e;
            }
        }
        report.chi_square = chi;
        report.chi_square_df = static_cast<long>(nz_rows - 1) * (nz_cols - 1);
        report.chi_square_critical = chi_square_critical_99(report.chi_square_df);
        report.chi_square_ok = report.chi_square_df <= 0 || chi < report.chi_square_critical;
    } else {
        report.chi_square_ok = true;
    }

    report.all_ok = report.chi_square_ok;
    for (const auto& s : report.stats) report.all_ok = report.all_ok && s.ok;
    return report;
}

std::string AuditReport::to_string() const {
    std::ostringstream os;
    for (const auto& s : stats) {
        char line[256];
        std::snprintf(line, sizeof(line),
                      "%-32s observed=%.6f expected=%.6f interval=[%.6f, %.6f] n=%ld %s",
                      s.name.c_str(), s.observed, s.expected, s.lo, s.hi, s.support,
                      s.ok ? "ok" : "VIOLATION");
        os << line << "\n";
    }
    char chi_line[256];
    std::snprintf(chi_line, sizeof(chi_line),
                  "%-32s chi2=%.4f critical(99%%, df=%ld)=%.4f %s", "rare_vs_label_chi_square",
                  chi_square, chi_square_df, chi_square_critical,
                  chi_square_ok ? "ok" : "VIOLATION");
    os << chi_line << "\n";
    os << (all_ok ? "audit: all checks passed" : "audit: VIOLATIONS found") << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Serialization: [magic u32][version u32][meta_len u64][meta JSON][raw f64].

namespace {

constexpr std::uint32_t kMagic = 0x43544453;  // "CTDS"
constexpr std::uint32_t kVersion = 1;

nlohmann::json config_to_json(const PlantedConfig& c) {
    return nlohmann::json{{"grid", c.grid},
                          {"cell", c.cell},
                          {"pretrain_classes", c.pretrain_classes},
                          {"downstream_classes", c.downstream_classes},
                          {"rare_rate", c.rare_rate},
                          {"rare_contrast", c.rare_contrast},
                          {"spurious_class", c.spurious_class},
                          {"spurious_strength", c.spurious_strength},
                          {"spurious_base", c.spurious_base},
                          {"downstream_b_rate", c.downstream_b_rate},
                          {"signature_cells", c.signature_cells},
                          {"distractor_cells", c.distractor_cells},
                          {"pretrain_size", c.pretrain_size},
                          {"train_size", c.train_size},
                          {"test_size", c.test_size},
                          {"noise_sigma", c.noise_sigma},
                          {"seed", c.seed}};
}

PlantedConfig config_from_json(const nlohmann::json& j) {
    PlantedConfig c;
    c.grid = j.value("grid", c.grid);
    c.cell = j.value("cell", c.cell);
    c.pretrain_classes = j.value("pretrain_classes", c.pretrain_classes);
    c.downstream_classes = j.value("downstream_classes", c.downstream_classes);
    c.rare_rate = j.value("rare_rate", c.rare_rate);
    c.rare_contrast = j.value("rare_contrast", c.rare_contrast);
    c.spurious_class = j.value("spurious_class", c.spurious_class);
    c.spurious_strength = j.value("spurious_strength", c.spurious_strength);
    c.spurious_base = j.value("spurious_base", c.spurious_base);
    c.downstream_b_rate = j.value("downstream_b_rate", c.downstream_b_rate);
    c.signature_cells = j.value("signature_cells", c.signature_cells);
    c.distractor_cells = j.value("distractor_cells", c.distractor_cells);
    c.pretrain_size = j.value("pretrain_size", c.pretrain_size);
    c.train_size = j.value("train_size", c.train_size);
    c.test_size = j.value("test_size", c.test_size);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.seed = j.value("seed", c.seed);
    return c;
}

nlohmann::json split_meta(const Dataset& ds) {
    nlohmann::json j;
    j["split"] = ds.split;
    j["num_classes"] = ds.num_classes;
    j["count"] = ds.examples.size();
    auto labels = nlohmann::json::array();
    auto rare_glyph = nlohmann::json::array();
    auto rare_cell = nlohmann::json::array();
    auto has_a = nlohmann::json::array();
    auto has_b = nlohmann::json::array();
    for (const auto& ex : ds.examples) {
        labels.push_back(ex.label);
        rare_glyph.push_back(ex.rare_glyph);
        rare_cell.push_back(ex.rare_cell);
        has_a.push_back(ex.has_a);
        has_b.push_back(ex.has_b);
    }
    j["labels"] = std::move(labels);
    j["rare_glyph"] = std::move(rare_glyph);
    j["rare_cell"] = std::move(rare_cell);
    j["has_a"] = std::move(has_a);
    j["has_b"] = std::move(has_b);
    return j;
}

void split_from_meta(const nlohmann::json& j, int pixels_per_example, const char*& cursor,
                     Dataset& ds) {
    ds.split = j.at("split").get<std::string>();
    ds.num_classes = j.at("num_classes").get<int>();
    const std::size_t count = j.at("count").get<std::size_t>();
    ds.examples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        Example& ex = ds.examples[i];
        ex.label = j.at("labels")[i].get<int>();
        ex.rare_glyph = j.at("rare_glyph")[i].get<int>();
        ex.rare_cell = j.at("rare_cell")[i].get<int>();
        ex.has_a = j.at("has_a")[i].get<bool>();
        ex.has_b = j.at("has_b")[i].get<bool>();
        ex.pixels.resize(pixels_per_example);
        std::memcpy(ex.pixels.data(), cursor, sizeof(double) * pixels_per_example);
        cursor += sizeof(double) * pixels_per_example;
    }
}

template <typename T>
void append_raw(std::string& buf, const T& value) {
    buf.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

std::string planted_config_to_json(const PlantedConfig& config) {
    return config_to_json(config).dump(2);
}

PlantedConfig planted_config_from_json(const std::string& text) {
    return config_from_json(nlohmann::json::parse(text));
}

void save_planted(const std::string& path, const PlantedData& data) {
    nlohmann::json meta;
    meta["config"] = config_to_json(data.config);
    const int side = data.config.grid * data.config.cell;
    meta["pixels_per_example"] = side * side;
    meta["splits"] = nlohmann::json::array(
        {split_meta(data.pretrain), split_meta(data.train), split_meta(data.test)});
    const std::string meta_str = meta.dump();

    std::string buf;
    append_raw(buf, kMagic);
    append_raw(buf, kVersion);
    append_raw(buf, static_cast<std::uint64_t>(meta_str.size()));
    buf += meta_str;
    for (const Dataset* ds : {&data.pretrain, &data.train, &data.test}) {
        for (const auto& ex : ds->examples) {
            buf.append(reinterpret_cast<const char*>(ex.pixels.data()),
                       sizeof(double) * ex.pixels.size());
        }
    }
    write_file_atomic(path, buf);
}

PlantedData load_planted(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 16) throw ContractError("load_planted: " + path + " is truncated");
    std::uint32_t magic = 0, version = 0;
    std::uint64_t meta_len = 0;
    std::memcpy(&magic, buf.data(), 4);
    std::memcpy(&version, buf.data() + 4, 4);
    std::memcpy(&meta_len, buf.data() + 8, 8);
    if (magic != kMagic || version != kVersion) {
        throw ContractError("load_planted: " + path + " is not a planted dataset container");
    }
    if (buf.size() < 16 + meta_len) throw ContractError("load_planted: truncated metadata");
    const auto meta = nlohmann::json::parse(buf.substr(16, meta_len));

    PlantedData out;
    out.config = config_from_json(meta.at("config"));
    const int ppe = meta.at("pixels_per_example").get<int>();
    std::size_t total = 0;
    for (const auto& s : meta.at("splits")) total += s.at("count").get<std::size_t>();
    if (buf.size() != 16 + meta_len + total * ppe * sizeof(double)) {
        throw ContractError("load_planted: pixel payload has unexpected size");
    }
    const char* cursor = buf.data() + 16 + meta_len;
    split_from_meta(meta.at("splits")[0], ppe, cursor, out.pretrain);
    split_from_meta(meta.at("splits")[1], ppe, cursor, out.train);
    split_from_meta(meta.at("splits")[2], ppe, cursor, out.test);
    return out;
}

}  // namespace ct
