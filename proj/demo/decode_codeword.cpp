// Joint blind equalization and LDPC decoding of one codeword.
//
//   demo_decode_codeword code.alist [snr_db]

#include <cstdlib>
#include <iostream>

#include "blindeq/experiment.hpp"

using namespace blindeq;

int main(int argc, char** argv)
{
    if (argc < 2) {
        std::cerr << "usage: demo_decode_codeword code.alist [snr_db]\n";
        return 2;
    }
    try {
        const LdpcCode code = load_code(argv[1]);
        const double snr_db = argc > 2 ? std::atof(argv[2]) : 8.0;
        Rng rng(7);

        const Bits bits = CodewordSampler(code).sample(rng);
        ChannelSpec spec;
        spec.h = builtin_channel("ht1");
        spec.padding = Padding::random_prefix;
        Observation y = clean_output(modulate(bits, Modulation::bpsk), spec, rng);
        add_noise(y, sigma_for_snr(y, snr_db), rng);

        const auto r = turbo_vaee(y, code, spec.h.re.size(), TurboConfig{}, ChannelKind::linear, rng, {}, &bits);
        std::cout << "bp rounds " << r.diagnostics.bp_rounds.size() << ", zero syndrome "
                  << (r.zero_syndrome ? "yes" : "no") << '\n';
        for (const auto& round : r.diagnostics.bp_rounds)
            std::cout << "  round " << round.round << ": syndrome weight " << round.syndrome_weight << ", BER "
                      << *round.ber << '\n';
        std::cout << "estimated taps";
        for (double v : r.h_est) std::cout << ' ' << v;
        std::cout << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
