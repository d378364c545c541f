#ifndef SOUNDSPRING_EXPERIMENT_HPP
#define SOUNDSPRING_EXPERIMENT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "context_model.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"
#include "rvq.hpp"
#include "synthetic.hpp"
#include "toy_codec.hpp"
#include "transport.hpp"

namespace soundspring {

inline constexpr int kCsvSchemaVersion = 1;

/// Run manifest. Every field has a default; parse_manifest reports bad
/// fields by their JSON path.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    int trials = 50;
    double clip_seconds = 2.0;
    std::vector<double> loss_ratios{0.0, 0.1, 0.2, 0.3};
    std::string channel = "bernoulli";  // or "markov" (uses `markov`, ignores loss_ratios)
    ChannelConfig markov;
    std::vector<bool> fec{true};
    std::vector<std::string> models{"count"};  // "count" | "uniform"
    std::vector<std::string> rates{"fixed"};   // "fixed" | "variable"
    int level = 8;
    std::vector<int> variable_levels{4, 6, 8};
    double window_seconds = 0.0;  // > 0: also report mean sliding-window SI-SNR

    CodecConfig codec;
    RvqTrainConfig rvq{8, 2, 64, 12, 1, 0.99, 256};
    int gos_len = 50;
    int n_units = 5;
    int groups = 3;
    int key_unit = 0;
    ConcealConfig conceal;
    AudioSynthConfig audio;

    int train_clips = 128;
    std::uint64_t train_samples = 4000;

    Layout layout() const {
        Layout l;
        l.gos.gos_len = gos_len;
        l.gos.n_units = n_units;
        l.gos.key_unit = key_unit;
        l.gos.fine_bounds = default_fine_bounds(rvq.n_layers, rvq.n_coarse, groups);
        l.conceal = conceal;
        return l;
    }
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(path + "." + key + ": wrong type");
    }
}

}  // namespace detail

inline ExperimentConfig parse_manifest(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("$: manifest must be a JSON object");
    ExperimentConfig c;
    using detail::read_field;
    read_field(j, "seed", c.seed, "$");
    read_field(j, "trials", c.trials, "$");
    read_field(j, "clip_seconds", c.clip_seconds, "$");
    read_field(j, "loss_ratios", c.loss_ratios, "$");
    read_field(j, "channel", c.channel, "$");
    read_field(j, "fec", c.fec, "$");
    read_field(j, "models", c.models, "$");
    read_field(j, "rates", c.rates, "$");
    read_field(j, "level", c.level, "$");
    read_field(j, "variable_levels", c.variable_levels, "$");
    read_field(j, "window_seconds", c.window_seconds, "$");
    read_field(j, "gos_len", c.gos_len, "$");
    read_field(j, "n_units", c.n_units, "$");
    read_field(j, "groups", c.groups, "$");
    read_field(j, "key_unit", c.key_unit, "$");
    read_field(j, "train_clips", c.train_clips, "$");
    read_field(j, "train_samples", c.train_samples, "$");
    if (j.contains("markov")) {
        try {
            c.markov = channel_from_json(j.at("markov"));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("$.markov: ") + e.what());
        }
    }
    if (j.contains("codec")) {
        const auto& cj = j.at("codec");
        read_field(cj, "frame_len", c.codec.frame_len, "$.codec");
        read_field(cj, "dim", c.codec.dim, "$.codec");
        read_field(cj, "n_layers", c.rvq.n_layers, "$.codec");
        read_field(cj, "n_coarse", c.rvq.n_coarse, "$.codec");
        read_field(cj, "vocab", c.rvq.vocab, "$.codec");
        read_field(cj, "epochs", c.rvq.epochs, "$.codec");
    }
    if (j.contains("conceal")) {
        read_field(j.at("conceal"), "window", c.conceal.window, "$.conceal");
        read_field(j.at("conceal"), "fine_layers", c.conceal.conceal_fine_layers, "$.conceal");
    }
    if (j.contains("audio")) {
        const auto& aj = j.at("audio");
        read_field(aj, "noise", c.audio.noise, "$.audio");
        read_field(aj, "partials", c.audio.partials, "$.audio");
        read_field(aj, "amplitude", c.audio.amplitude, "$.audio");
    }
    c.audio.frame_len = c.codec.frame_len;

    auto fail = [](const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); };
    if (c.trials < 1) fail("$.trials", "must be >= 1");
    if (c.clip_seconds <= 0) fail("$.clip_seconds", "must be positive");
    if (c.channel != "bernoulli" && c.channel != "markov") fail("$.channel", "expected bernoulli or markov");
    for (std::size_t i = 0; i < c.loss_ratios.size(); ++i) {
        if (!(c.loss_ratios[i] >= 0 && c.loss_ratios[i] <= 1)) fail("$.loss_ratios[" + std::to_string(i) + "]", "outside [0, 1]");
    }
    if (c.loss_ratios.empty()) fail("$.loss_ratios", "must not be empty");
    for (std::size_t i = 0; i < c.models.size(); ++i) {
        if (c.models[i] != "count" && c.models[i] != "uniform") fail("$.models[" + std::to_string(i) + "]", "expected count or uniform");
    }
    for (std::size_t i = 0; i < c.rates.size(); ++i) {
        if (c.rates[i] != "fixed" && c.rates[i] != "variable") fail("$.rates[" + std::to_string(i) + "]", "expected fixed or variable");
    }
    if (c.level < c.rvq.n_coarse || c.level > c.rvq.n_layers) fail("$.level", "outside [n_coarse, n_layers]");
    for (std::size_t i = 0; i < c.variable_levels.size(); ++i) {
        const int v = c.variable_levels[i];
        if (v < c.rvq.n_coarse || v > c.rvq.n_layers) fail("$.variable_levels[" + std::to_string(i) + "]", "outside [n_coarse, n_layers]");
    }
    try {
        c.codec.validate();
        c.layout().gos.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("$: ") + e.what());
    }
    return c;
}

inline nlohmann::json manifest_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["schema_version"] = kCsvSchemaVersion;
    j["seed"] = c.seed;
    j["trials"] = c.trials;
    j["clip_seconds"] = c.clip_seconds;
    j["loss_ratios"] = c.loss_ratios;
    j["channel"] = c.channel;
    j["markov"] = channel_to_json(c.markov);
    j["fec"] = c.fec;
    j["models"] = c.models;
    j["rates"] = c.rates;
    j["level"] = c.level;
    j["variable_levels"] = c.variable_levels;
    j["window_seconds"] = c.window_seconds;
    j["gos_len"] = c.gos_len;
    j["n_units"] = c.n_units;
    j["groups"] = c.groups;
    j["key_unit"] = c.key_unit;
    j["train_clips"] = c.train_clips;
    j["train_samples"] = c.train_samples;
    j["codec"] = {{"frame_len", c.codec.frame_len},
                  {"dim", c.codec.dim},
                  {"n_layers", c.rvq.n_layers},
                  {"n_coarse", c.rvq.n_coarse},
                  {"vocab", c.rvq.vocab},
                  {"epochs", c.rvq.epochs}};
    j["conceal"] = {{"window", c.conceal.window}, {"fine_layers", c.conceal.conceal_fine_layers}};
    j["audio"] = {{"noise", c.audio.noise}, {"partials", c.audio.partials}, {"amplitude", c.audio.amplitude}};
    return j;
}

struct MetricsRow {
    double loss_ratio = 0;
    std::string channel;
    bool fec = true;
    std::string model;
    std::string rate;
    double bitrate_kbps = 0;
    double si_snr_db = 0;
    double sdr_db = 0;
    double mfcc_dist = 0;
    std::optional<double> token_accuracy;
    double coarse_loss_rate = 0;  // coarse slices left unrecovered
    double packet_loss_rate = 0;
    std::optional<double> window_si_snr_db;
    std::uint64_t seed = 0;
    int trial = 0;
};

/// Trained artifacts shared by every trial of an experiment.
struct ExperimentAssets {
    RvqCodec codec;
    std::unique_ptr<CountModel> count_model;
    std::unique_ptr<UniformModel> uniform_model;
};

inline std::size_t clip_samples(const ExperimentConfig& c) {
    const auto frames = static_cast<std::size_t>(std::ceil(c.clip_seconds * c.audio.sample_rate / c.codec.frame_len));
    return std::max<std::size_t>(1, frames) * static_cast<std::size_t>(c.codec.frame_len);
}

/// Trains codec and context model on clips drawn from a seed stream disjoint
/// from the evaluation trials.
inline ExperimentAssets prepare_assets(const ExperimentConfig& c) {
    ExperimentAssets a;
    FeatureSequence corpus(0, c.codec.dim);
    std::vector<FeatureSequence> clips;
    for (int i = 0; i < c.train_clips; ++i) {
        auto audio = generate_audio(clip_samples(c), Rng::mix(c.seed, 1000000 + static_cast<std::uint64_t>(i)), c.audio);
        clips.push_back(analyze(audio, c.codec));
        for (std::size_t t = 0; t < clips.back().frames(); ++t) corpus.push_back(clips.back().frame(t));
    }
    RvqTrainConfig rc = c.rvq;
    rc.seed = Rng::mix(c.seed, 7);
    a.codec = train_codebooks(corpus, rc);
    std::vector<TokenGrid> grids;
    for (const auto& f : clips) grids.push_back(quantize(f, a.codec, a.codec.n_layers()));
    TrainSchedule ts;
    ts.n_coarse = a.codec.n_coarse;
    ts.samples = c.train_samples;
    ts.seed = Rng::mix(c.seed, 8);
    a.count_model = std::make_unique<CountModel>(train_count_model(grids, ts));
    a.uniform_model = std::make_unique<UniformModel>(a.codec.vocab());
    return a;
}

inline double mean_window_si_snr(const AudioSignal& ref, const AudioSignal& est, double seconds) {
    const auto win = static_cast<std::size_t>(seconds * ref.sample_rate);
    if (win == 0 || win > ref.size()) return si_snr(ref, est);
    double sum = 0;
    int n = 0;
    for (std::size_t s = 0; s + win <= ref.size(); s += win / 2) {
        AudioSignal a{{ref.samples.begin() + static_cast<std::ptrdiff_t>(s), ref.samples.begin() + static_cast<std::ptrdiff_t>(s + win)}, ref.sample_rate};
        AudioSignal b{{est.samples.begin() + static_cast<std::ptrdiff_t>(s), est.samples.begin() + static_cast<std::ptrdiff_t>(s + win)}, est.sample_rate};
        if (detail::energy(a.samples) == 0) continue;
        sum += si_snr(a, b);
        ++n;
    }
    return n ? sum / n : si_snr(ref, est);
}

/// Full sweep: loss ratio x FEC x model x rate x trials. Each trial's clip,
/// level draw and channel trace derive from (seed, trial), so the same trial
/// sees the same audio under every setting.
inline std::vector<MetricsRow> run_experiment(const ExperimentConfig& c, const ExperimentAssets& a) {
    std::vector<MetricsRow> rows;
    const Layout base = c.layout();
    const std::vector<double> sweep = c.channel == "markov" ? std::vector<double>{stationary_loss(c.markov)} : c.loss_ratios;
    for (std::size_t li = 0; li < sweep.size(); ++li) {
        for (bool fec : c.fec) {
            for (const auto& model_name : c.models) {
                const ContextModel& model = model_name == "count" ? static_cast<const ContextModel&>(*a.count_model)
                                                                  : static_cast<const ContextModel&>(*a.uniform_model);
                for (const auto& rate : c.rates) {
                    Layout layout = base;
                    layout.fec.enabled = fec;
                    for (int trial = 0; trial < c.trials; ++trial) {
                        const std::uint64_t tseed = Rng::mix(c.seed, static_cast<std::uint64_t>(trial));
                        const AudioSignal clip = generate_audio(clip_samples(c), tseed, c.audio);
                        const FeatureSequence feats = analyze(clip, c.codec);
                        const auto levels = rate == "variable"
                                                ? variable_levels(feats.frames(), c.gos_len, c.variable_levels, tseed ^ 0x5A)
                                                : std::vector<std::uint8_t>(feats.frames(), static_cast<std::uint8_t>(c.level));
                        const EncodedStream es = send(feats, a.codec, model, layout, levels);
                        ChannelConfig ch = c.channel == "markov" ? c.markov : ChannelConfig::bernoulli(sweep[li]);
                        const auto trace = generate_trace(ch, es.packets.size(), Rng::mix(tseed, 31 + li));
                        const ReceivedAudio rx = receive(es.packets, trace, levels, a.codec, c.codec, model, layout,
                                                         clip.sample_rate);
                        const TokenGrid truth = quantize(feats, a.codec, levels);

                        MetricsRow row;
                        row.loss_ratio = sweep[li];
                        row.channel = c.channel;
                        row.fec = fec;
                        row.model = model_name;
                        row.rate = rate;
                        row.bitrate_kbps = static_cast<double>(es.report.total_bits) / 1000.0 /
                                           (static_cast<double>(clip.size()) / clip.sample_rate);
                        row.si_snr_db = si_snr(clip, rx.audio);
                        row.sdr_db = sdr(clip, rx.audio);
                        row.mfcc_dist = mfcc_distance(clip, rx.audio);
                        row.token_accuracy = token_accuracy(truth, rx.tokens.tokens, rx.tokens.states);
                        const auto& rep = rx.tokens.report;
                        row.coarse_loss_rate = rep.coarse_slices ? static_cast<double>(rep.coarse_lost_slices) / rep.coarse_slices : 0.0;
                        std::size_t lost = 0;
                        for (auto v : trace) lost += v;
                        row.packet_loss_rate = trace.empty() ? 0.0 : static_cast<double>(lost) / trace.size();
                        if (c.window_seconds > 0) row.window_si_snr_db = mean_window_si_snr(clip, rx.audio, c.window_seconds);
                        row.seed = tseed;
                        row.trial = trial;
                        rows.push_back(std::move(row));
                    }
                }
            }
        }
    }
    return rows;
}

inline std::string csv_header() {
    return "schema_version,loss_ratio,channel,fec,model,rate,bitrate_kbps,si_snr_db,sdr_db,mfcc_dist,token_accuracy,"
           "coarse_loss_rate,packet_loss_rate,window_si_snr_db,seed,trial";
}

inline std::string to_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << csv_header() << '\n' << std::setprecision(10);
    for (const auto& r : rows) {
        os << kCsvSchemaVersion << ',' << r.loss_ratio << ',' << r.channel << ',' << (r.fec ? 1 : 0) << ',' << r.model
           << ',' << r.rate << ',' << r.bitrate_kbps << ',' << r.si_snr_db << ',' << r.sdr_db << ',' << r.mfcc_dist
           << ',';
        if (r.token_accuracy) os << *r.token_accuracy;
        os << ',' << r.coarse_loss_rate << ',' << r.packet_loss_rate << ',';
        if (r.window_si_snr_db) os << *r.window_si_snr_db;
        os << ',' << r.seed << ',' << r.trial << '\n';
    }
    return os.str();
}

/// Inverse of to_csv. Rejects other schema versions and malformed rows.
inline std::vector<MetricsRow> from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != csv_header()) throw FormatError("unexpected CSV header");
    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 16) throw FormatError("CSV line " + std::to_string(lineno) + ": expected 16 fields");
        try {
            if (std::stoi(f[0]) != kCsvSchemaVersion) throw FormatError("CSV schema version mismatch");
            MetricsRow r;
            r.loss_ratio = std::stod(f[1]);
            r.channel = f[2];
            r.fec = f[3] == "1";
            r.model = f[4];
            r.rate = f[5];
            r.bitrate_kbps = std::stod(f[6]);
            r.si_snr_db = std::stod(f[7]);
            r.sdr_db = std::stod(f[8]);
            r.mfcc_dist = std::stod(f[9]);
            if (!f[10].empty()) r.token_accuracy = std::stod(f[10]);
            r.coarse_loss_rate = std::stod(f[11]);
            r.packet_loss_rate = std::stod(f[12]);
            if (!f[13].empty()) r.window_si_snr_db = std::stod(f[13]);
            r.seed = std::stoull(f[14]);
            r.trial = std::stoi(f[15]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw FormatError("CSV line " + std::to_string(lineno) + ": bad number");
        }
    }
    return rows;
}

/// Linear-interpolated quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) return NAN;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Means per setting plus SI-SNR / SDR CDF quantiles.
inline nlohmann::json summarize(const std::vector<MetricsRow>& rows) {
    struct Acc {
        std::vector<double> bitrate, si, sd, mf, acc, coarse;
    };
    std::map<std::string, Acc> groups;
    std::map<std::string, nlohmann::json> keys;
    for (const auto& r : rows) {
        std::ostringstream k;
        k << r.channel << '|' << r.loss_ratio << '|' << r.fec << '|' << r.model << '|' << r.rate;
        auto& g = groups[k.str()];
        keys[k.str()] = {{"channel", r.channel}, {"loss_ratio", r.loss_ratio}, {"fec", r.fec}, {"model", r.model}, {"rate", r.rate}};
        g.bitrate.push_back(r.bitrate_kbps);
        g.si.push_back(r.si_snr_db);
        g.sd.push_back(r.sdr_db);
        g.mf.push_back(r.mfcc_dist);
        if (r.token_accuracy) g.acc.push_back(*r.token_accuracy);
        g.coarse.push_back(r.coarse_loss_rate);
    }
    auto mean = [](const std::vector<double>& v) {
        if (v.empty()) return nlohmann::json(nullptr);
        double s = 0;
        for (double x : v) s += x;
        return nlohmann::json(s / static_cast<double>(v.size()));
    };
    auto cdf = [](const std::vector<double>& v) {
        nlohmann::json j;
        for (double q : {0.1, 0.25, 0.5, 0.75, 0.9}) j["p" + std::to_string(static_cast<int>(q * 100))] = quantile(v, q);
        return j;
    };
    nlohmann::json out;
    out["schema_version"] = kCsvSchemaVersion;
    out["rows"] = rows.size();
    out["groups"] = nlohmann::json::array();
    for (const auto& [k, g] : groups) {
        nlohmann::json j = keys[k];
        j["n"] = g.si.size();
        j["mean"] = {{"bitrate_kbps", mean(g.bitrate)}, {"si_snr_db", mean(g.si)}, {"sdr_db", mean(g.sd)},
                     {"mfcc_dist", mean(g.mf)}, {"token_accuracy", mean(g.acc)}, {"coarse_loss_rate", mean(g.coarse)}};
        j["cdf"] = {{"si_snr_db", cdf(g.si)}, {"sdr_db", cdf(g.sd)}};
        out["groups"].push_back(std::move(j));
    }
    return out;
}

}  // namespace soundspring

#endif  // SOUNDSPRING_EXPERIMENT_HPP
