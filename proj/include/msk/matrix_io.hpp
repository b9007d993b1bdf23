#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "msk/matrix.hpp"

namespace msk {

// Errors from the CSV readers/writers carry the offending line number where
// one exists.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

namespace detail {

inline std::vector<double> parse_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t comma = line.find(',', pos);
        std::string field = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
        // trim surrounding whitespace
        std::size_t b = field.find_first_not_of(" \t\r");
        std::size_t e = field.find_last_not_of(" \t\r");
        if (b == std::string::npos) {
            throw ParseError("empty field", line_no);
        }
        field = field.substr(b, e - b + 1);
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc() || ptr != field.data() + field.size()) {
            throw ParseError("unparseable field '" + field + "'", line_no);
        }
        if (!std::isfinite(v)) {
            throw ParseError("non-finite value '" + field + "'", line_no);
        }
        out.push_back(v);
        if (comma == std::string::npos) {
            break;
        }
        pos = comma + 1;
    }
    return out;
}

// Shortest-exact float printing: 17 significant digits round-trips any double.
inline void append_double(std::string& out, double v) {
    char buf[32];
    int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
    out.append(buf, static_cast<std::size_t>(n));
}

}  // namespace detail

inline DenseMatrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    std::vector<double> data;
    std::size_t cols = 0;
    std::size_t rows = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") {
            continue;
        }
        auto fields = detail::parse_csv_line(line, line_no);
        if (rows == 0) {
            cols = fields.size();
        } else if (fields.size() != cols) {
            throw ParseError("ragged row: expected " + std::to_string(cols) + " fields, got " +
                                 std::to_string(fields.size()),
                             line_no);
        }
        data.insert(data.end(), fields.begin(), fields.end());
        ++rows;
    }
    if (rows == 0) {
        throw IoError("'" + path + "' contains no data");
    }
    return DenseMatrix(rows, cols, std::move(data));
}

inline void write_matrix_csv(const DenseMatrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    std::string buf;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        buf.clear();
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) buf.push_back(',');
            detail::append_double(buf, m(i, j));
        }
        buf.push_back('\n');
        out << buf;
    }
    if (!out) {
        throw IoError("write failed for '" + path + "'");
    }
}

// Tensor format: channel blocks separated by a single blank line, each block a
// CSV matrix of identical shape.
inline DenseTensor3 read_tensor3(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    std::vector<std::vector<std::vector<double>>> blocks;
    std::vector<std::vector<double>> current;
    std::string line;
    std::size_t line_no = 0;
    auto flush_block = [&] {
        if (!current.empty()) {
            blocks.push_back(std::move(current));
            current.clear();
        }
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") {
            flush_block();
            continue;
        }
        current.push_back(detail::parse_csv_line(line, line_no));
    }
    flush_block();
    if (blocks.empty()) {
        throw IoError("'" + path + "' contains no data");
    }
    std::size_t rows = blocks[0].size();
    std::size_t cols = blocks[0][0].size();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].size() != rows) {
            throw IoError("tensor block " + std::to_string(b + 1) + " shape mismatch in '" + path +
                          "'");
        }
        for (const auto& row : blocks[b]) {
            if (row.size() != cols) {
                throw IoError("tensor block " + std::to_string(b + 1) + " shape mismatch in '" +
                              path + "'");
            }
        }
    }
    DenseTensor3 t(blocks.size(), rows, cols);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                t(k, i, j) = blocks[k][i][j];
            }
        }
    }
    return t;
}

inline void write_tensor3(const DenseTensor3& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    std::string buf;
    for (std::size_t k = 0; k < t.channels(); ++k) {
        if (k) out << '\n';
        for (std::size_t i = 0; i < t.rows(); ++i) {
            buf.clear();
            for (std::size_t j = 0; j < t.cols(); ++j) {
                if (j) buf.push_back(',');
                detail::append_double(buf, t(k, i, j));
            }
            buf.push_back('\n');
            out << buf;
        }
    }
    if (!out) {
        throw IoError("write failed for '" + path + "'");
    }
}

}  // namespace msk
