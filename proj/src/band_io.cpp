#include "scb/band_io.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace scb {

using nlohmann::json;

std::string format_real(double v) {
    if (!std::isfinite(v)) {
        return "null";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        switch (ch) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '\r': out += "\\r"; break;
        default:
            if (static_cast<unsigned char>(ch) < 0x20) {
                char buf[8];
                std::snprintf(buf, sizeof buf, "\\u%04x", ch);
                out += buf;
            } else {
                out += ch;
            }
        }
    }
    return out + "\"";
}

std::string real_array(const std::vector<double>& v) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_real(v[i]);
    }
    return out + "]";
}

std::string bool_array(const Mask& m) {
    std::string out = "[";
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (i) out += ",";
        out += m[i] ? "true" : "false";
    }
    return out + "]";
}

std::string size_array(const std::vector<std::size_t>& v) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out + "]";
}

std::string domain_json(const Domain& d) {
    std::string out = "{\"kind\":" + quote(std::string(to_string(d.kind())));
    switch (d.kind()) {
    case DomainKind::grid1d: out += ",\"x\":" + real_array(d.x()); break;
    case DomainKind::grid2d: out += ",\"x\":" + real_array(d.x()) + ",\"y\":" + real_array(d.y()); break;
    case DomainKind::discrete: {
        out += ",\"labels\":[";
        for (std::size_t i = 0; i < d.labels().size(); ++i) {
            if (i) out += ",";
            out += quote(d.labels()[i]);
        }
        out += "]";
        break;
    }
    }
    if (d.has_mask()) {
        out += ",\"mask\":" + bool_array(d.mask());
    }
    return out + "}";
}

std::vector<double> reals(const json& j, const char* key, std::size_t n) {
    if (!j.contains(key)) {
        throw Error("invalid_band", std::string("missing field '") + key + "'");
    }
    const json& a = j.at(key);
    if (!a.is_array()) {
        throw Error("invalid_band", std::string("field '") + key + "' must be an array");
    }
    // Accept row-major nested arrays for 2D fields as well as flat arrays.
    std::vector<double> out;
    out.reserve(n);
    auto push = [&](const json& v) {
        if (v.is_null()) {
            out.push_back(std::numeric_limits<double>::quiet_NaN());
        } else if (v.is_number()) {
            out.push_back(v.get<double>());
        } else {
            throw Error("invalid_band", std::string("field '") + key + "' holds a non-numeric entry");
        }
    };
    for (const auto& v : a) {
        if (v.is_array()) {
            for (const auto& w : v) push(w);
        } else {
            push(v);
        }
    }
    if (out.size() != n) {
        throw Error("invalid_band", std::string("field '") + key + "' has " + std::to_string(out.size()) +
                                        " values, domain has " + std::to_string(n));
    }
    return out;
}

Mask bools(const json& a, std::size_t n) {
    Mask m;
    auto push = [&](const json& v) {
        if (v.is_boolean()) {
            m.push_back(v.get<bool>() ? 1 : 0);
        } else if (v.is_number()) {
            m.push_back(v.get<double>() != 0.0 ? 1 : 0);
        } else {
            throw Error("invalid_band", "mask entries must be boolean");
        }
    };
    for (const auto& v : a) {
        if (v.is_array()) {
            for (const auto& w : v) push(w);
        } else {
            push(v);
        }
    }
    if (m.size() != n) {
        throw Error("invalid_band", "mask does not match the grid shape");
    }
    return m;
}

Domain domain_from_json(const json& j) {
    if (!j.is_object() || !j.contains("kind")) {
        throw Error("invalid_band", "domain must be an object with a 'kind'");
    }
    const std::string kind = j.at("kind").get<std::string>();
    auto axis = [&](const char* key) {
        if (!j.contains(key)) {
            throw Error("invalid_band", std::string("domain is missing '") + key + "'");
        }
        return j.at(key).get<std::vector<double>>();
    };
    if (kind == "grid1d") {
        auto x = axis("x");
        Mask m = j.contains("mask") ? bools(j.at("mask"), x.size()) : Mask{};
        return Domain::grid1d(std::move(x), std::move(m));
    }
    if (kind == "grid2d") {
        auto x = axis("x");
        auto y = axis("y");
        Mask m = j.contains("mask") ? bools(j.at("mask"), x.size() * y.size()) : Mask{};
        return Domain::grid2d(std::move(x), std::move(y), std::move(m));
    }
    if (kind == "discrete") {
        auto labels = j.at("labels").get<std::vector<std::string>>();
        Mask m = j.contains("mask") ? bools(j.at("mask"), labels.size()) : Mask{};
        return Domain::discrete(std::move(labels), std::move(m));
    }
    throw Error("invalid_band", "unknown domain kind '" + kind + "'");
}

} // namespace

std::string band_to_json(const SCBand& band) {
    std::string out = "{";
    out += "\"domain\":" + domain_json(band.domain);
    out += ",\"shape\":" + size_array(band.domain.shape());
    out += ",\"eta_hat\":" + real_array(band.eta_hat);
    if (band.has_critical_value()) {
        out += ",\"se\":" + real_array(band.se);
        out += ",\"q_alpha\":" + format_real(band.q_alpha);
        out += ",\"tau\":" + format_real(band.tau);
    }
    out += ",\"alpha\":" + format_real(band.alpha);
    out += ",\"scb_low\":" + real_array(band.scb_low);
    out += ",\"scb_up\":" + real_array(band.scb_up);
    out += ",\"link\":" + quote(band.link == Link::logit ? "logit" : "identity");
    if (band.link == Link::logit) {
        out += ",\"eta_link\":" + real_array(band.eta_link);
    }
    out += ",\"degenerate\":" + std::string(band.degenerate ? "true" : "false");
    out += ",\"method\":" + quote(band.method);
    out += "}\n";
    return out;
}

SCBand band_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error("invalid_band", std::string("band file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw Error("invalid_band", "band file must hold a JSON object");
    }
    SCBand band;
    try {
        band.domain = j.contains("domain") ? domain_from_json(j.at("domain"))
                                           : Domain::grid1d([&] {
                                                 std::vector<double> x(j.at("scb_low").size());
                                                 for (std::size_t i = 0; i < x.size(); ++i) x[i] = double(i);
                                                 return x;
                                             }());
        const std::size_t n = band.domain.size();
        if (j.contains("shape")) {
            const auto shape = j.at("shape").get<std::vector<std::size_t>>();
            if (shape != band.domain.shape()) {
                throw Error("invalid_band", "'shape' disagrees with the domain");
            }
        }
        band.scb_low = reals(j, "scb_low", n);
        band.scb_up = reals(j, "scb_up", n);
        if (j.contains("eta_hat")) {
            band.eta_hat = reals(j, "eta_hat", n);
        } else {
            band.eta_hat.resize(n);
            for (std::size_t i = 0; i < n; ++i) band.eta_hat[i] = 0.5 * (band.scb_low[i] + band.scb_up[i]);
        }
        band.alpha = j.value("alpha", 0.05);
        if (j.contains("se")) {
            band.se = reals(j, "se", n);
            if (!j.contains("q_alpha")) {
                throw Error("invalid_band", "band carries 'se' but no 'q_alpha'");
            }
            band.q_alpha = j.at("q_alpha").get<double>();
            band.tau = j.value("tau", 1.0);
        }
        const std::string link = j.value("link", std::string("identity"));
        if (link == "logit") {
            band.link = Link::logit;
            if (band.has_critical_value()) {
                band.eta_link = reals(j, "eta_link", n);
            }
        } else if (link != "identity") {
            throw Error("invalid_band", "unknown link '" + link + "'");
        }
        band.degenerate = j.value("degenerate", false);
        band.method = j.value("method", std::string());
    } catch (const json::exception& e) {
        throw Error("invalid_band", std::string("malformed band: ") + e.what());
    }
    for (std::size_t i = 0; i < band.domain.size(); ++i) {
        if (band.domain.included(i)) continue;
        // masked cells carry no values
        constexpr double nan = std::numeric_limits<double>::quiet_NaN();
        band.scb_low[i] = band.scb_up[i] = band.eta_hat[i] = nan;
        if (band.has_critical_value()) band.se[i] = nan;
        if (!band.eta_link.empty()) band.eta_link[i] = nan;
    }
    validate_band(band);
    return band;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("io_error", "cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("io_error", "cannot write '" + path + "'");
    }
    out << text;
    if (!out) {
        throw Error("io_error", "failed writing '" + path + "'");
    }
}

void write_band_file(const std::string& path, const SCBand& band) { write_text_file(path, band_to_json(band)); }

SCBand read_band_file(const std::string& path) { return band_from_json(read_text_file(path)); }

std::string regions_to_json(const Domain& domain, const ThresholdSpec& spec, const std::vector<RegionSet>& regions,
                            const std::optional<ContainmentSummary>& containment) {
    std::string out = "{\"set_type\":" + quote(std::string(to_string(spec.set_type)));
    out += ",\"levels\":[";
    for (std::size_t i = 0; i < spec.levels.size(); ++i) {
        if (i) out += ",";
        const auto& l = spec.levels[i];
        if (spec.set_type == SetType::interval) {
            out += "[" + format_real(l.low) + "," + format_real(l.high) + "]";
        } else {
            out += format_real(l.low);
        }
    }
    out += "],\"shape\":" + size_array(domain.shape());

    auto emit = [&](const char* key, auto member, std::size_t start, std::size_t stride) {
        std::string s = std::string(",\"") + key + "\":[";
        bool first = true;
        for (std::size_t i = start; i < regions.size(); i += stride) {
            if (!first) s += ",";
            first = false;
            s += bool_array(regions[i].*member);
        }
        return s + "]";
    };
    if (spec.set_type == SetType::two_sided) {
        for (std::size_t side = 0; side < 2; ++side) {
            out += side == 0 ? ",\"upper\":{" : ",\"lower\":{";
            std::string body = emit("inner", &RegionSet::inner, side, 2) + emit("outer", &RegionSet::outer, side, 2) +
                               emit("estimate", &RegionSet::estimate, side, 2);
            out += body.substr(1) + "}";
        }
    } else {
        out += emit("inner", &RegionSet::inner, 0, 1);
        out += emit("outer", &RegionSet::outer, 0, 1);
        out += emit("estimate", &RegionSet::estimate, 0, 1);
    }
    if (containment) {
        out += ",\"contain_individual\":[";
        for (std::size_t i = 0; i < containment->contain_individual.size(); ++i) {
            if (i) out += ",";
            out += containment->contain_individual[i] ? "true" : "false";
        }
        out += "],\"contain_all\":" + std::string(containment->contain_all ? "true" : "false");
    }
    return out + "}\n";
}

Field read_field_file(const std::string& path, const Domain& domain) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw Error("invalid_field", "'" + path + "' is not valid JSON: " + e.what());
    }
    json holder;
    if (j.is_array()) {
        holder["values"] = j;
    } else if (j.is_object() && j.contains("values")) {
        holder["values"] = j.at("values");
    } else if (j.is_object() && j.contains("eta_hat")) {
        holder["values"] = j.at("eta_hat");
    } else {
        throw Error("invalid_field", "'" + path + "' holds no 'values' array");
    }
    try {
        return reals(holder, "values", domain.size());
    } catch (const Error& e) {
        throw Error("shape_mismatch", e.what());
    }
}

} // namespace scb
