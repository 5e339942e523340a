#include "scb/formula.hpp"

#include "scb/core.hpp"

#include <algorithm>
#include <cctype>

namespace scb {

std::string Term::label() const {
    switch (kind) {
    case Kind::intercept: return "(Intercept)";
    case Kind::main: return var;
    case Kind::power: return "I(" + var + "^" + std::to_string(power) + ")";
    case Kind::all_columns: return ".";
    }
    return {};
}

namespace {

class FormulaParser {
public:
    explicit FormulaParser(std::string_view text) : text_(text) {}

    ModelSpec parse() {
        ModelSpec spec;
        skip_ws();
        spec.response = name();
        skip_ws();
        expect('~');
        do {
            skip_ws();
            spec.terms.push_back(term());
            skip_ws();
        } while (accept('+'));
        if (pos_ != text_.size()) {
            fail("unexpected '" + std::string(1, text_[pos_]) + "'");
        }
        for (std::size_t i = 0; i < spec.terms.size(); ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                if (spec.terms[i] == spec.terms[j]) {
                    throw Error("parse_error", "duplicate term '" + spec.terms[i].label() + "'");
                }
            }
            if (spec.terms[i].var == spec.response && spec.terms[i].kind != Term::Kind::all_columns) {
                throw Error("parse_error", "response '" + spec.response + "' appears among the predictors");
            }
        }
        return spec;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw Error("parse_error", "formula parse error at position " + std::to_string(pos_) + ": " + what);
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char ch) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ch) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char ch) {
        if (!accept(ch)) {
            fail(std::string("expected '") + ch + "'");
        }
    }

    static bool name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
    static bool name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

    std::string name() {
        skip_ws();
        const std::size_t start = pos_;
        if (pos_ >= text_.size() || !name_start(text_[pos_])) {
            fail("expected a variable name");
        }
        while (pos_ < text_.size() && name_char(text_[pos_])) ++pos_;
        std::string n(text_.substr(start, pos_ - start));
        if (n == ".") {
            pos_ = start;
            fail("'.' is not a variable name");
        }
        return n;
    }

    Term term() {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == '.' &&
            (pos_ + 1 == text_.size() || !name_char(text_[pos_ + 1]))) {
            ++pos_;
            return Term::all();
        }
        const std::size_t start = pos_;
        if (text_.substr(pos_, 1) == "I") {
            std::size_t look = pos_ + 1;
            while (look < text_.size() && std::isspace(static_cast<unsigned char>(text_[look]))) ++look;
            if (look < text_.size() && text_[look] == '(') {
                pos_ = look + 1;
                std::string var = name();
                expect('^');
                skip_ws();
                const std::size_t digits = pos_;
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
                if (digits == pos_) {
                    fail("expected an integer exponent");
                }
                const int k = std::stoi(std::string(text_.substr(digits, pos_ - digits)));
                if (k < 2) {
                    pos_ = digits;
                    fail("exponent must be at least 2");
                }
                expect(')');
                return Term::pow(std::move(var), k);
            }
        }
        pos_ = start;
        return Term::main(name());
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

} // namespace

ModelSpec parse_formula(std::string_view text) { return FormulaParser(text).parse(); }

ModelSpec resolve_formula(const ModelSpec& spec, const Table& table) {
    ModelSpec out;
    out.response = spec.response;
    for (const auto& t : spec.terms) {
        if (t.kind == Term::Kind::all_columns) {
            for (const auto& name : table.names()) {
                if (name != spec.response) {
                    out.terms.push_back(Term::main(name));
                }
            }
        } else if (t.kind != Term::Kind::intercept) {
            out.terms.push_back(t);
        }
    }
    for (std::size_t i = 0; i < out.terms.size(); ++i) {
        if (!table.has(out.terms[i].var)) {
            throw Error("missing_column", "predictor '" + out.terms[i].var + "' not found in data");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (out.terms[i] == out.terms[j]) {
                throw Error("parse_error", "duplicate term '" + out.terms[i].label() + "' after expanding '.'");
            }
        }
    }
    return out;
}

} // namespace scb
