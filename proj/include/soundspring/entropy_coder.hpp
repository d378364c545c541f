#ifndef SOUNDSPRING_ENTROPY_CODER_HPP
#define SOUNDSPRING_ENTROPY_CODER_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "common.hpp"
#include "pmf.hpp"

namespace soundspring {

struct CodedSlice {
    std::vector<std::uint8_t> bytes;
    std::uint32_t n_symbols = 0;

    friend bool operator==(const CodedSlice&, const CodedSlice&) = default;
};

// 32-bit range coder with byte-wise renormalization and carry propagation
// through a cached byte plus a run of pending 0xFF bytes. Integer-only.
// The leading byte of the classic scheme is always zero and is not emitted.
// Every slice ends with one check symbol of probability 2^-8: 8 bits of
// redundancy so a truncated or corrupted tail is caught at decode time.
inline constexpr std::uint32_t kCheckFreq = kPmfTotal >> 8;

class RangeEncoder {
public:
    void encode(std::uint32_t cum, std::uint32_t freq) {
        const std::uint32_t r = range_ >> kPmfTotalBits;
        low_ += static_cast<std::uint64_t>(r) * cum;
        range_ = r * freq;
        while (range_ < kTop) {
            range_ <<= 8;
            shift_low();
        }
    }

    // Minimal flush: settle on the value in [low, low + range) with the most
    // trailing zero bytes and emit only its significant bytes. The decoder
    // reads zeros past the end.
    std::vector<std::uint8_t> finish() {
        low_ = canonical_final(low_, range_);
        for (int i = 0, n = significant_bytes(static_cast<std::uint32_t>(low_)); i <= n; ++i) shift_low();
        return std::move(out_);
    }

    static int significant_bytes(std::uint32_t v) {
        int n = 4;
        while (n > 0 && (v & 0xFFu) == 0) {
            v >>= 8;
            --n;
        }
        return n;
    }

    static std::uint64_t canonical_final(std::uint64_t low, std::uint32_t range) {
        for (int shift = 32; shift > 0; shift -= 8) {
            const std::uint64_t g = 1ull << shift;
            const std::uint64_t v = (low + g - 1) / g * g;
            if (v < low + range) return v;
        }
        return low;
    }

private:
    static constexpr std::uint32_t kTop = 1u << 24;

    void shift_low() {
        if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
            const auto carry = static_cast<std::uint8_t>(low_ >> 32);
            std::uint8_t temp = cache_;
            do {
                put(static_cast<std::uint8_t>(temp + carry));
                temp = 0xFF;
            } while (--cache_size_ != 0);
            cache_ = static_cast<std::uint8_t>(static_cast<std::uint32_t>(low_) >> 24);
        }
        ++cache_size_;
        low_ = (low_ & 0x00FFFFFFu) << 8;
    }

    void put(std::uint8_t b) {
        if (first_) {
            first_ = false;  // always 0
            return;
        }
        out_.push_back(b);
    }

    std::uint64_t low_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::uint8_t cache_ = 0;
    std::uint64_t cache_size_ = 1;
    bool first_ = true;
    std::vector<std::uint8_t> out_;
};

class RangeDecoder {
public:
    explicit RangeDecoder(std::span<const std::uint8_t> in) : in_(in) {
        for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
    }

    // End-of-slice check symbol, see encode_symbols.
    void decode_check() {
        const std::uint32_t r = range_ >> kPmfTotalBits;
        if (code_ / r >= kCheckFreq) throw DecodeError("range-coded payload failed its end check");
        range_ = r * kCheckFreq;
        while (range_ < kTop) {
            code_ = (code_ << 8) | next();
            range_ <<= 8;
        }
    }

    std::size_t decode(const Pmf& pmf) {
        const std::uint32_t r = range_ >> kPmfTotalBits;
        const std::uint32_t target = code_ / r;
        if (target >= kPmfTotal) throw DecodeError("corrupt range-coded payload");
        const std::size_t s = pmf.lookup(target);
        code_ -= r * pmf.cum(s);
        range_ = r * pmf.freq(s);
        while (range_ < kTop) {
            code_ = (code_ << 8) | next();
            range_ <<= 8;
        }
        return s;
    }

    // The final window must be the encoder's canonical choice, and the
    // payload must end exactly at its last significant byte: the symbol
    // count fixes how many bytes were read, so a short or padded payload
    // shows up as a length mismatch.
    void finish() const {
        const std::uint32_t low = window_ - code_;
        const auto v = static_cast<std::uint32_t>(RangeEncoder::canonical_final(low, range_));
        if (code_ >= range_ || v != window_) throw DecodeError("corrupt range-coded payload");
        const std::size_t expected = pos_ - 4 + static_cast<std::size_t>(RangeEncoder::significant_bytes(v));
        if (in_.size() < expected) throw DecodeError("range-coded payload truncated");
        if (in_.size() > expected) throw DecodeError("range-coded payload has trailing bytes");
    }

private:
    static constexpr std::uint32_t kTop = 1u << 24;

    std::uint32_t next() {
        const std::uint32_t b = pos_ < in_.size() ? in_[pos_] : 0;
        ++pos_;
        window_ = (window_ << 8) | b;
        return b;
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
    std::uint32_t code_ = 0;
    std::uint32_t window_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
};

inline CodedSlice encode_symbols(std::span<const std::uint16_t> tokens, std::span<const Pmf> pmfs) {
    if (tokens.size() != pmfs.size()) throw ShapeError("one pmf per token required");
    RangeEncoder enc;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Pmf& p = pmfs[i];
        if (tokens[i] >= p.size()) throw VocabularyError("token outside the pmf support");
        if (p.freq(tokens[i]) == 0) throw CoderError("zero-frequency symbol");
        enc.encode(p.cum(tokens[i]), p.freq(tokens[i]));
    }
    enc.encode(0, kCheckFreq);
    return {enc.finish(), static_cast<std::uint32_t>(tokens.size())};
}

/// Decodes exactly `coded.n_symbols` tokens. A short or padded payload is a
/// decode error. A pmf sequence that
/// differs from the encoder's is not detectable here.
inline std::vector<std::uint16_t> decode_symbols(const CodedSlice& coded, std::span<const Pmf> pmfs) {
    if (pmfs.size() != coded.n_symbols) throw ShapeError("one pmf per symbol required");
    RangeDecoder dec(coded.bytes);
    std::vector<std::uint16_t> out;
    out.reserve(coded.n_symbols);
    for (std::uint32_t i = 0; i < coded.n_symbols; ++i) out.push_back(static_cast<std::uint16_t>(dec.decode(pmfs[i])));
    dec.decode_check();
    dec.finish();
    return out;
}

}  // namespace soundspring

#endif  // SOUNDSPRING_ENTROPY_CODER_HPP
