#ifndef LRNR_PDE_PARAMS_HPP
#define LRNR_PDE_PARAMS_HPP

#include <array>
#include <cstddef>

namespace lrnr {

// Physical parameters of the convection-diffusion-reaction problem:
// mu1 convection speed, mu2 diffusion coefficient, mu3 reaction coefficient.
struct PdeParams {
    double mu1 = 0.0;
    double mu2 = 0.0;
    double mu3 = 0.0;

    double operator[](std::size_t i) const { return i == 0 ? mu1 : (i == 1 ? mu2 : mu3); }
};

// Axis-aligned box of admissible physical parameters.
struct ParamDomain {
    std::array<double, 3> lo{0.0, 0.0, 0.0};
    std::array<double, 3> hi{0.0, 0.0, 0.0};

    bool contains(const PdeParams& mu) const {
        for (std::size_t i = 0; i < 3; ++i) {
            if (mu[i] < lo[i] || mu[i] > hi[i]) return false;
        }
        return true;
    }

    // Pure convection preset, mu1 in [5, 8].
    static ParamDomain d1() { return ParamDomain{{5.0, 0.0, 0.0}, {8.0, 0.0, 0.0}}; }
    // Full convection-diffusion-reaction preset, mu in [1,3]x[0,2]x[0,2].
    static ParamDomain d2() { return ParamDomain{{1.0, 0.0, 0.0}, {3.0, 2.0, 2.0}}; }
};

}  // namespace lrnr

#endif
