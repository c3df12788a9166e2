#pragma once

namespace cste {

// Standard normal CDF.
double normal_cdf(double x) noexcept;

// Standard normal quantile (Wichura's AS 241, PPND16; ~1e-16 relative).
// Throws ArgumentError for p outside (0, 1).
double normal_quantile(double p);

// z_{c/2} for a two-sided interval of the given coverage level, e.g. 0.95 -> 1.95996...
double two_sided_critical(double level);

}  // namespace cste
