#include "lva/dataset.hpp"

#include "lva/errors.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace lva {

void PairedDataset::validate() const {
    if (inputs.rows() != labels.rows()) {
        throw ShapeError("dataset '" + name + "': " + std::to_string(inputs.rows()) + " inputs vs " +
                         std::to_string(labels.rows()) + " labels");
    }
    if (inputs.rows() < 1) throw ArgumentError("dataset '" + name + "' is empty");
    if (inputs.cols() < 1 || labels.cols() < 1) throw ShapeError("dataset '" + name + "' has zero-width inputs or labels");
    linalg::require_finite(inputs, "dataset inputs");
    linalg::require_finite(labels, "dataset labels");
}

PairedDataset PairedDataset::slice(Eigen::Index begin, Eigen::Index count) const {
    if (begin < 0 || count < 0 || begin + count > size()) throw ArgumentError("dataset slice out of range");
    return {inputs.middleRows(begin, count), labels.middleRows(begin, count), name};
}

namespace {

void append_number(std::string& out, double v) {
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    out.append(buf, static_cast<std::size_t>(n));
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

std::string to_csv(const PairedDataset& data) {
    std::string out;
    for (Eigen::Index c = 0; c < data.input_dim(); ++c) out += (c ? ",x" : "x") + std::to_string(c);
    for (Eigen::Index c = 0; c < data.label_dim(); ++c) out += ",y" + std::to_string(c);
    out += '\n';
    for (Eigen::Index r = 0; r < data.size(); ++r) {
        for (Eigen::Index c = 0; c < data.input_dim(); ++c) {
            if (c) out += ',';
            append_number(out, data.inputs(r, c));
        }
        for (Eigen::Index c = 0; c < data.label_dim(); ++c) {
            out += ',';
            append_number(out, data.labels(r, c));
        }
        out += '\n';
    }
    return out;
}

PairedDataset from_csv(const std::string& text, const std::string& name) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("dataset CSV: missing header");
    const auto header = split(trim(line));
    Eigen::Index dx = 0, dy = 0;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string_view h = trim(header[i]);
        const std::string expect_x = "x" + std::to_string(dx);
        const std::string expect_y = "y" + std::to_string(dy);
        if (dy == 0 && h == expect_x) {
            ++dx;
        } else if (h == expect_y) {
            ++dy;
        } else {
            throw ParseError("dataset CSV line 1, column " + std::to_string(i + 1) + ": unexpected header '" +
                             std::string(h) + "'");
        }
    }
    if (dx == 0 || dy == 0) throw ParseError("dataset CSV line 1: header needs at least x0 and y0");

    std::vector<double> values;
    std::size_t line_no = 1;
    Eigen::Index rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split(trim(line));
        if (static_cast<Eigen::Index>(fields.size()) != dx + dy) {
            throw ParseError("dataset CSV line " + std::to_string(line_no) + ": expected " + std::to_string(dx + dy) +
                             " fields, got " + std::to_string(fields.size()));
        }
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const std::string_view f = trim(fields[i]);
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
                throw ParseError("dataset CSV line " + std::to_string(line_no) + ", column " + std::to_string(i + 1) +
                                 ": bad number '" + std::string(f) + "'");
            }
            values.push_back(v);
        }
        ++rows;
    }
    if (rows == 0) throw ParseError("dataset CSV: no samples");

    PairedDataset data{Matrix(rows, dx), Matrix(rows, dy), name};
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < dx; ++c) data.inputs(r, c) = values[static_cast<std::size_t>(r * (dx + dy) + c)];
        for (Eigen::Index c = 0; c < dy; ++c) data.labels(r, c) = values[static_cast<std::size_t>(r * (dx + dy) + dx + c)];
    }
    return data;
}

PairedDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_csv(buffer.str(), path);
}

void save_dataset(const PairedDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset '" + path + "'");
    out << to_csv(data);
}

}  // namespace lva
