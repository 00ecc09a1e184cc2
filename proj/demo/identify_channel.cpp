// Blind identification of a short real channel from BPSK observations.
//
//   demo_identify_channel [snr_db]

#include <cstdlib>
#include <iostream>

#include "blindeq/eval.hpp"
#include "blindeq/vae_loss.hpp"

using namespace blindeq;

int main(int argc, char** argv)
{
    try {
        const double snr_db = argc > 1 ? std::atof(argv[1]) : 12.0;
        Rng rng(2024);

        ChannelSpec spec;
        spec.h = centered_taps(builtin_channel("ht1"));
        spec.padding = Padding::centered;
        const auto x = random_symbols(2000, Modulation::bpsk, rng);
        Observation y = clean_output(x, spec, rng);
        add_noise(y, sigma_for_snr(y, snr_db), rng);

        LinearTrainConfig cfg;
        cfg.padding = Padding::centered;
        const auto fit = train_vaee_linear(y, Modulation::bpsk, spec.h.re.size(), cfg, rng);

        std::cout << "true taps     ";
        for (double v : spec.h.re) std::cout << ' ' << v;
        std::cout << "\nestimated taps";
        for (double v : fit.h.re) std::cout << ' ' << v;
        const auto res = ser_resolved(hard_decision(fit.posterior), x, spec.h.re.size());
        std::cout << "\nnoise variance " << fit.sigma2 << "\nSER " << res.ser << " (sign "
                  << (res.rotation ? "flipped" : "kept") << ", delay " << res.delay << ")\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
