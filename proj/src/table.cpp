#include "scb/table.hpp"

#include "scb/band_io.hpp"
#include "scb/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

namespace scb {

namespace {

std::string trim(std::string s) {
    auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        s = s.substr(1, s.size() - 2);
    }
    return s;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
            cur += ch;
        } else if (ch == ',' && !quoted) {
            cells.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    cells.push_back(trim(cur));
    return cells;
}

} // namespace

std::size_t CsvFrame::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        throw Error("missing_column", "column '" + name + "' not found");
    }
    return static_cast<std::size_t>(it - header.begin());
}

CsvFrame parse_csv(const std::string& text) {
    CsvFrame frame;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++line_no;
        if (line.find_first_not_of(" \t") == std::string::npos) {
            if (end == text.size()) break;
            continue;
        }
        auto cells = split_line(line);
        if (frame.header.empty()) {
            frame.header = std::move(cells);
        } else {
            if (cells.size() != frame.header.size()) {
                throw Error("parse_error", "CSV line " + std::to_string(line_no) + " has " +
                                               std::to_string(cells.size()) + " cells, header has " +
                                               std::to_string(frame.header.size()));
            }
            frame.rows.push_back(std::move(cells));
        }
        if (end == text.size()) break;
    }
    if (frame.header.empty()) {
        throw Error("parse_error", "CSV input has no header row");
    }
    return frame;
}

CsvFrame read_csv(const std::string& path) { return parse_csv(read_text_file(path)); }

Table::Table(std::vector<std::string> names, std::vector<std::vector<double>> columns) {
    if (names.size() != columns.size()) {
        throw Error("invalid_table", "column name count does not match column count");
    }
    for (std::size_t j = 0; j < names.size(); ++j) {
        add_column(std::move(names[j]), std::move(columns[j]));
    }
}

void Table::add_column(std::string name, std::vector<double> values) {
    if (has(name)) {
        throw Error("invalid_table", "duplicate column '" + name + "'");
    }
    if (!columns_.empty() && values.size() != n_rows()) {
        throw Error("invalid_table", "column '" + name + "' has " + std::to_string(values.size()) +
                                         " rows, expected " + std::to_string(n_rows()));
    }
    names_.push_back(std::move(name));
    columns_.push_back(std::move(values));
}

Table Table::from_csv(const CsvFrame& frame) {
    Table t;
    for (std::size_t j = 0; j < frame.header.size(); ++j) {
        std::vector<double> col;
        col.reserve(frame.rows.size());
        for (std::size_t i = 0; i < frame.rows.size(); ++i) {
            const std::string& cell = frame.rows[i][j];
            double v = 0.0;
            if (cell == "NA" || cell == "NaN" || cell == "nan" || cell.empty()) {
                v = std::numeric_limits<double>::quiet_NaN();
            } else {
                auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
                if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
                    throw Error("parse_error", "non-numeric value '" + cell + "' in column '" +
                                                   frame.header[j] + "', row " + std::to_string(i + 1));
                }
            }
            col.push_back(v);
        }
        t.add_column(frame.header[j], std::move(col));
    }
    return t;
}

bool Table::has(const std::string& name) const noexcept {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const std::vector<double>& Table::col(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) {
        throw Error("missing_column", "column '" + name + "' not found");
    }
    return columns_[static_cast<std::size_t>(it - names_.begin())];
}

std::string write_csv(const Table& table) {
    std::string out;
    for (std::size_t j = 0; j < table.n_cols(); ++j) {
        if (j) out += ",";
        out += table.names()[j];
    }
    out += "\n";
    for (std::size_t i = 0; i < table.n_rows(); ++i) {
        for (std::size_t j = 0; j < table.n_cols(); ++j) {
            if (j) out += ",";
            const double v = table.col(j)[i];
            out += std::isnan(v) ? std::string("NA") : format_real(v);
        }
        out += "\n";
    }
    return out;
}

} // namespace scb
