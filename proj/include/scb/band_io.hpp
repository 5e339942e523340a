// JSON serialization of bands and region sets.
//
// Output is canonical: fixed key order, every real printed with 17
// significant digits, masked cells written as null. Loading a file and saving
// it again therefore reproduces the original bytes.
#pragma once

#include "scb/core.hpp"
#include "scb/inverse_sets.hpp"

#include <optional>
#include <string>

namespace scb {

std::string band_to_json(const SCBand& band);

/// Parses and validates a band document. Files produced by other software may
/// omit "se" and "q_alpha"; eta_hat defaults to the band midpoint when absent.
SCBand band_from_json(const std::string& text);

void write_band_file(const std::string& path, const SCBand& band);
SCBand read_band_file(const std::string& path);

std::string regions_to_json(const Domain& domain, const ThresholdSpec& spec,
                            const std::vector<RegionSet>& regions,
                            const std::optional<ContainmentSummary>& containment = std::nullopt);

/// Reads a field matching the band's domain: either a bare JSON array, or an
/// object with a "values" (or "eta_hat") array.
Field read_field_file(const std::string& path, const Domain& domain);

std::string format_real(double v);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

} // namespace scb
