#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <soundspring/experiment.hpp>
#include <soundspring/io.hpp>

using namespace soundspring;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir = ".";
    int frame_len = 0;
    int dim = 0;
};

ExperimentConfig load_config(const Globals& g) {
    ExperimentConfig c;
    if (!g.config.empty()) c = parse_manifest(json::parse(read_text(g.config)));
    if (g.seed_set) c.seed = g.seed;
    if (g.frame_len > 0) {
        c.codec.frame_len = g.frame_len;
        c.audio.frame_len = g.frame_len;
    }
    if (g.dim > 0) c.codec.dim = g.dim;
    c.codec.validate();
    return c;
}

std::string out_path(const Globals& g, const std::string& name) {
    fs::create_directories(g.out_dir);
    return (fs::path(g.out_dir) / name).string();
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Pads with zeros to a whole number of frames; the caller keeps the original length.
AudioSignal padded(AudioSignal a, int frame_len) {
    const auto n = static_cast<std::size_t>(frame_len);
    const std::size_t frames = std::max<std::size_t>(1, (a.size() + n - 1) / n);
    a.samples.resize(frames * n, 0.0);
    return a;
}

AudioSignal trimmed(AudioSignal a, std::size_t n) {
    if (a.samples.size() > n) a.samples.resize(n);
    return a;
}

std::vector<AudioSignal> training_audio(const ExperimentConfig& c, const std::vector<std::string>& inputs) {
    std::vector<AudioSignal> clips;
    for (const auto& p : inputs) clips.push_back(padded(load_audio(p, c.audio.sample_rate), c.codec.frame_len));
    if (clips.empty()) {
        for (int i = 0; i < c.train_clips; ++i) {
            clips.push_back(generate_audio(clip_samples(c),
                                           Rng::mix(c.seed, 1000000 + static_cast<std::uint64_t>(i)), c.audio));
        }
    }
    return clips;
}

std::unique_ptr<ContextModel> load_model(const std::string& path, int vocab) {
    if (path.empty()) return std::make_unique<UniformModel>(vocab);
    auto m = std::make_unique<CountModel>(CountModel::deserialize(read_file(path)));
    if (m->vocab() != vocab) throw ConfigError("context model vocabulary does not match the codec");
    return m;
}

ChannelConfig channel_for(const ExperimentConfig& c, std::optional<double> loss, std::uint64_t seed) {
    ChannelConfig ch = loss ? ChannelConfig::bernoulli(*loss) : c.channel == "markov" ? c.markov
                                                                                       : ChannelConfig::bernoulli(c.loss_ratios.back());
    ch.seed = seed;
    return ch;
}

json receiver_json(const ReceiverReport& r) {
    return {{"encoded_cells", r.encoded_cells},
            {"received", r.r},
            {"lost", r.l},
            {"invalid", r.i},
            {"concealed", r.c},
            {"case_counts", r.case_counts},
            {"blackout_frames", r.blackout_frames},
            {"fec_recoveries", r.fec_recoveries},
            {"coarse_lost_slices", r.coarse_lost_slices},
            {"coarse_slices", r.coarse_slices},
            {"untrained_fallback", r.untrained_fallback}};
}

json sender_json(const SenderReport& r) {
    return {{"packets", r.packets},
            {"coarse_bits", r.coarse_bits},
            {"fine_bits", r.fine_bits},
            {"fec_bits", r.fec_bits},
            {"header_bits", r.header_bits},
            {"total_bits", r.total_bits},
            {"fine_bits_per_token", r.fine_bits_per_token()},
            {"bits_per_token_by_layer", r.bits_per_token_by_layer},
            {"untrained_fallback", r.untrained_fallback}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"soundspring: token-domain packet loss concealment toolkit"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "run manifest (JSON)")->check(CLI::ExistingFile);
    app.add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "master seed");
    app.add_option("--out-dir", g.out_dir, "output directory");
    app.add_option("--frame-len", g.frame_len, "samples per codec frame");
    app.add_option("--dim", g.dim, "feature dimension per frame");

    // train-codebooks
    std::vector<std::string> tc_inputs;
    auto* tc = app.add_subcommand("train-codebooks", "train RVQ codebooks (synthetic audio if no inputs)");
    tc->add_option("inputs", tc_inputs, "WAV or raw float32 files")->check(CLI::ExistingFile);

    // train-context
    std::vector<std::string> tx_inputs;
    std::string tx_codec;
    auto* tx = app.add_subcommand("train-context", "train the count context model on quantized audio");
    tx->add_option("--codec", tx_codec, "codebook file")->required()->check(CLI::ExistingFile);
    tx->add_option("inputs", tx_inputs, "WAV or raw float32 files")->check(CLI::ExistingFile);

    // encode
    std::string en_input, en_codec, en_model;
    std::optional<int> en_level;
    bool en_variable = false, en_no_fec = false;
    auto* en = app.add_subcommand("encode", "audio -> packet stream");
    en->add_option("input", en_input, "audio file")->required()->check(CLI::ExistingFile);
    en->add_option("--codec", en_codec, "codebook file")->required()->check(CLI::ExistingFile);
    en->add_option("--model-path", en_model, "context model file (uniform if omitted)")->check(CLI::ExistingFile);
    en->add_option("--level", en_level, "layers per frame (K)");
    en->add_flag("--variable", en_variable, "draw K per GoS from the config's variable_levels");
    en->add_flag("--no-fec", en_no_fec, "disable coarse FEC");

    // channel
    std::string ch_packets;
    std::optional<double> ch_loss;
    auto* ch = app.add_subcommand("channel", "draw a loss trace for a packet stream");
    ch->add_option("packets", ch_packets, "packet stream file")->required()->check(CLI::ExistingFile);
    ch->add_option("--loss", ch_loss, "i.i.d. loss probability (default: config channel)");

    // decode
    std::string de_packets, de_trace, de_codec, de_model, de_meta;
    auto* de = app.add_subcommand("decode", "packet stream + trace -> concealed audio");
    de->add_option("packets", de_packets, "packet stream file")->required()->check(CLI::ExistingFile);
    de->add_option("--meta", de_meta, "metadata written by encode")->required()->check(CLI::ExistingFile);
    de->add_option("--trace", de_trace, "loss trace (lossless if omitted)")->check(CLI::ExistingFile);
    de->add_option("--codec", de_codec, "codebook file")->required()->check(CLI::ExistingFile);
    de->add_option("--model-path", de_model, "context model file (uniform if omitted)")->check(CLI::ExistingFile);

    // stream
    std::string st_input, st_codec, st_model;
    std::optional<double> st_loss;
    StreamConfig sc;
    int st_level = 0;
    auto* st = app.add_subcommand("stream", "frame-by-frame send/receive through a lossy channel");
    st->add_option("input", st_input, "audio file")->required()->check(CLI::ExistingFile);
    st->add_option("--codec", st_codec, "codebook file")->required()->check(CLI::ExistingFile);
    st->add_option("--model-path", st_model, "context model file (uniform if omitted)")->check(CLI::ExistingFile);
    st->add_option("--stride", sc.stride, "T_S: frames per batch");
    st->add_option("--coding-ctx", sc.coding_ctx, "T_G: coding history in frames");
    st->add_option("--conceal-ctx", sc.conceal_ctx, "T_C: concealment window in frames");
    st->add_option("--lookahead", sc.lookahead, "T_F: future frames");
    st->add_option("--level", st_level, "layers per frame (default: config level)");
    st->add_option("--loss", st_loss, "i.i.d. loss probability (default: config channel)");

    // simulate
    auto* si = app.add_subcommand("simulate", "Monte Carlo sweep from the run manifest");

    // report
    std::string rp_results;
    auto* rp = app.add_subcommand("report", "recompute the summary from a results CSV");
    rp->add_option("results", rp_results, "results.csv")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig c = load_config(g);

        if (*tc) {
            const auto clips = training_audio(c, tc_inputs);
            FeatureSequence corpus(0, c.codec.dim);
            for (const auto& a : clips) {
                const auto f = analyze(a, c.codec);
                for (std::size_t t = 0; t < f.frames(); ++t) corpus.push_back(f.frame(t));
            }
            RvqTrainConfig rc = c.rvq;
            rc.seed = Rng::mix(c.seed, 7);
            const auto codec = train_codebooks(corpus, rc);
            write_file(out_path(g, "codec.bin"), serialize_codec(codec));
            write_json(out_path(g, "manifest.json"), manifest_to_json(c));
            std::printf("trained %d layers x %d codewords on %zu frames\n", codec.n_layers(), codec.vocab(), corpus.frames());
        } else if (*tx) {
            const auto codec = deserialize_codec(read_file(tx_codec));
            std::vector<TokenGrid> grids;
            for (const auto& a : training_audio(c, tx_inputs)) {
                grids.push_back(quantize(analyze(a, c.codec), codec, codec.n_layers()));
            }
            TrainSchedule ts;
            ts.n_coarse = codec.n_coarse;
            ts.samples = c.train_samples;
            ts.seed = Rng::mix(c.seed, 8);
            const auto model = train_count_model(grids, ts);
            write_file(out_path(g, "model.ctx"), model.serialize());
            write_json(out_path(g, "manifest.json"), manifest_to_json(c));
            std::printf("trained context model: %zu observations\n", static_cast<std::size_t>(model.observations()));
        } else if (*en) {
            const auto codec = deserialize_codec(read_file(en_codec));
            const auto model = load_model(en_model, codec.vocab());
            const AudioSignal raw = load_audio(en_input, c.audio.sample_rate);
            const auto feats = analyze(padded(raw, c.codec.frame_len), c.codec);
            Layout layout = c.layout();
            layout.fec.enabled = !en_no_fec;
            const auto levels = en_variable ? variable_levels(feats.frames(), c.gos_len, c.variable_levels, c.seed)
                                            : std::vector<std::uint8_t>(feats.frames(),
                                                                        static_cast<std::uint8_t>(en_level.value_or(c.level)));
            const auto es = send(feats, codec, *model, layout, levels);
            write_file(out_path(g, "packets.bin"), write_packet_stream(es.packets));
            json meta = {{"manifest", manifest_to_json(c)},
                         {"fec", layout.fec.enabled},
                         {"levels", levels},
                         {"n_samples", raw.size()},
                         {"sample_rate", raw.sample_rate},
                         {"sender", sender_json(es.report)}};
            write_json(out_path(g, "meta.json"), meta);
            std::printf("%zu packets, %.2f kbps\n", es.packets.size(),
                        static_cast<double>(es.report.total_bits) / 1000.0 /
                            (static_cast<double>(raw.size()) / raw.sample_rate));
        } else if (*ch) {
            const auto packets = read_packet_stream(read_file(ch_packets));
            const auto cfg = channel_for(c, ch_loss, c.seed);
            const auto trace = generate_trace(cfg, packets.size());
            write_text(out_path(g, "trace.txt"), write_trace(trace));
            write_json(out_path(g, "channel.json"), channel_to_json(cfg));
            std::size_t lost = 0;
            for (auto v : trace) lost += v;
            std::printf("%zu of %zu packets lost\n", lost, trace.size());
        } else if (*de) {
            const json meta = json::parse(read_text(de_meta));
            const ExperimentConfig mc = parse_manifest(meta.at("manifest"));
            const auto codec = deserialize_codec(read_file(de_codec));
            const auto model = load_model(de_model, codec.vocab());
            const auto packets = read_packet_stream(read_file(de_packets));
            const ChannelTrace trace = de_trace.empty() ? ChannelTrace(packets.size(), 0) : read_trace(read_text(de_trace));
            Layout layout = mc.layout();
            layout.fec.enabled = meta.at("fec").get<bool>();
            const auto levels = meta.at("levels").get<std::vector<std::uint8_t>>();
            const int sr = meta.at("sample_rate").get<int>();
            const auto rx = receive(packets, trace, levels, codec, mc.codec, *model, layout, sr);
            const auto audio = trimmed(rx.audio, meta.at("n_samples").get<std::size_t>());
            write_file(out_path(g, "decoded.wav"), encode_wav(audio));
            write_json(out_path(g, "receiver.json"), receiver_json(rx.tokens.report));
            std::printf("decoded %zu samples, %zu cells concealed\n", audio.size(), rx.tokens.report.c);
        } else if (*st) {
            const auto codec = deserialize_codec(read_file(st_codec));
            const auto model = load_model(st_model, codec.vocab());
            const AudioSignal raw = load_audio(st_input, c.audio.sample_rate);
            const auto feats = analyze(padded(raw, c.codec.frame_len), c.codec);
            const int level = st_level > 0 ? st_level : c.level;
            const auto grid = quantize(feats, codec, level);
            Layout layout = Layout::streaming(c.layout().gos.fine_bounds, sc);
            StreamSender sender(layout, *model, codec.n_layers(), codec.vocab());
            StreamReceiver receiver(layout, *model, std::vector<std::uint8_t>(grid.frames(), static_cast<std::uint8_t>(level)));
            ChannelConfig cfg = channel_for(c, st_loss, c.seed);
            std::vector<StreamEmission> emissions;
            std::vector<std::uint16_t> row(static_cast<std::size_t>(codec.n_layers()));
            for (std::size_t t = 0; t < grid.frames(); ++t) {
                for (int k = 0; k < codec.n_layers(); ++k) row[k] = k < level ? grid.at(t, k) : 0;
                for (auto& e : sender.push(row, level)) emissions.push_back(std::move(e));
            }
            for (auto& e : sender.flush()) emissions.push_back(std::move(e));
            std::size_t total = 0;
            for (const auto& e : emissions) total += e.packets.size();
            const auto trace = generate_trace(cfg, total);
            json batches = json::array();
            std::size_t at = 0;
            for (const auto& e : emissions) {
                ChannelTrace part(trace.begin() + static_cast<std::ptrdiff_t>(at),
                                  trace.begin() + static_cast<std::ptrdiff_t>(at + e.packets.size()));
                at += e.packets.size();
                const auto rel = receiver.step(e.packets, part);
                batches.push_back({{"batch", e.batch},
                                   {"packets", e.packets.size()},
                                   {"frames_buffered", e.frames_buffered},
                                   {"released_first", rel.first_frame},
                                   {"released_frames", rel.n_frames}});
            }
            const auto& rx = receiver.result();
            const auto audio = trimmed(render(rx, codec, c.codec, raw.sample_rate), raw.size());
            write_file(out_path(g, "streamed.wav"), encode_wav(audio));
            write_json(out_path(g, "stream.json"), {{"stream",
                                                     {{"stride", sc.stride},
                                                      {"coding_ctx", sc.coding_ctx},
                                                      {"conceal_ctx", sc.conceal_ctx},
                                                      {"lookahead", sc.lookahead}}},
                                                    {"channel", channel_to_json(cfg)},
                                                    {"batches", batches},
                                                    {"receiver", receiver_json(rx.report)},
                                                    {"sender", sender_json(sender.report())},
                                                    {"si_snr_db", si_snr(raw, audio)}});
            std::printf("%zu batches, %zu packets, SI-SNR %.2f dB\n", emissions.size(), total, si_snr(raw, audio));
        } else if (*si) {
            const auto assets = prepare_assets(c);
            const auto rows = run_experiment(c, assets);
            write_text(out_path(g, "results.csv"), to_csv(rows));
            write_json(out_path(g, "summary.json"), summarize(rows));
            write_json(out_path(g, "manifest.json"), manifest_to_json(c));
            std::printf("%zu rows written to %s\n", rows.size(), g.out_dir.c_str());
        } else if (*rp) {
            const auto rows = from_csv(read_text(rp_results));
            const auto summary = summarize(rows);
            write_json(out_path(g, "summary.json"), summary);
            for (const auto& grp : summary["groups"]) {
                std::printf("%-9s loss %.3f fec %d %-7s %-8s  n=%-4d si-snr %7.2f dB  sdr %7.2f dB  %7.2f kbps\n",
                            grp["channel"].get<std::string>().c_str(), grp["loss_ratio"].get<double>(),
                            grp["fec"].get<bool>() ? 1 : 0, grp["model"].get<std::string>().c_str(),
                            grp["rate"].get<std::string>().c_str(), grp["n"].get<int>(),
                            grp["mean"]["si_snr_db"].get<double>(), grp["mean"]["sdr_db"].get<double>(),
                            grp["mean"]["bitrate_kbps"].get<double>());
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
