// Model formulas of the form  y ~ x1 + I(x1^2) + .
#pragma once

#include "scb/table.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace scb {

struct Term {
    enum class Kind { intercept, main, power, all_columns };
    Kind kind = Kind::main;
    std::string var;
    int power = 1;

    static Term intercept() { return {Kind::intercept, {}, 1}; }
    static Term main(std::string v) { return {Kind::main, std::move(v), 1}; }
    static Term pow(std::string v, int k) { return {Kind::power, std::move(v), k}; }
    static Term all() { return {Kind::all_columns, {}, 1}; }

    /// Column label in the expanded design, e.g. "(Intercept)", "x1", "I(x1^2)".
    std::string label() const;
    friend bool operator==(const Term&, const Term&) = default;
};

struct ModelSpec {
    std::string response;
    std::vector<Term> terms; // the intercept is implicit and not listed
};

/// Grammar: NAME "~" term ("+" term)*, term := NAME | "I(" NAME "^" INT ")" | "."
/// Whitespace is ignored. Errors report the byte offset of the failure.
ModelSpec parse_formula(std::string_view text);

/// Expands "." against the table's columns (table order, response excluded)
/// and rejects duplicates and unknown columns.
ModelSpec resolve_formula(const ModelSpec& spec, const Table& table);

} // namespace scb
