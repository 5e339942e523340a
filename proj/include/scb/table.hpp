// Minimal column store and CSV reader.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace scb {

/// Header row plus string cells, as read from disk.
struct CsvFrame {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const; // throws when absent
};

CsvFrame read_csv(const std::string& path);
CsvFrame parse_csv(const std::string& text);

/// Named real-valued columns of equal length.
class Table {
public:
    Table() = default;
    Table(std::vector<std::string> names, std::vector<std::vector<double>> columns);

    static Table from_csv(const CsvFrame& frame);

    std::size_t n_rows() const noexcept { return columns_.empty() ? 0 : columns_.front().size(); }
    std::size_t n_cols() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }

    bool has(const std::string& name) const noexcept;
    const std::vector<double>& col(const std::string& name) const;
    const std::vector<double>& col(std::size_t j) const { return columns_.at(j); }

    void add_column(std::string name, std::vector<double> values);

private:
    std::vector<std::string> names_;
    std::vector<std::vector<double>> columns_;
};

std::string write_csv(const Table& table);

} // namespace scb
