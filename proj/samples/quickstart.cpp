// Trains a small codec and context model on synthetic audio, sends one clip
// through a 20% loss channel and compares concealment with and without the
// context model.
#include <cstdio>

#include <soundspring/experiment.hpp>

using namespace soundspring;

int main() {
    ExperimentConfig c;
    c.clip_seconds = 2.0;
    const auto assets = prepare_assets(c);

    const AudioSignal clip = generate_audio(clip_samples(c), 42, c.audio);
    const FeatureSequence feats = analyze(clip, c.codec);
    const Layout layout = c.layout();
    const std::vector<std::uint8_t> levels(feats.frames(), static_cast<std::uint8_t>(c.level));

    for (const ContextModel* model : {static_cast<const ContextModel*>(assets.count_model.get()),
                                      static_cast<const ContextModel*>(assets.uniform_model.get())}) {
        const auto es = send(feats, assets.codec, *model, layout, levels);
        const auto trace = generate_trace(ChannelConfig::bernoulli(0.2), es.packets.size(), 7);
        const auto rx = receive(es.packets, trace, levels, assets.codec, c.codec, *model, layout);
        const auto clean = receive(es.packets, ChannelTrace(es.packets.size(), 0), levels, assets.codec, c.codec,
                                   *model, layout);
        std::printf("%-7s  %5.2f kbps  fine %.2f bits/token  SI-SNR clean %6.2f dB, 20%% loss %6.2f dB  (%zu cells concealed)\n",
                    model == assets.count_model.get() ? "count" : "uniform",
                    static_cast<double>(es.report.total_bits) / 1000.0 / c.clip_seconds, es.report.fine_bits_per_token(),
                    si_snr(clip, clean.audio), si_snr(clip, rx.audio), rx.tokens.report.c);
    }
    return 0;
}
