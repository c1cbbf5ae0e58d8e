#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tcformer/errors.hpp"
#include "tcformer/io.hpp"

namespace tcformer::io {

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    check_input(out.good(), "cannot open for writing: " + path);
    for (size_t i = 0; i < header.size(); ++i) {
        out << (i ? "," : "") << header[i];
    }
    out << "\n";
    char buf[64];
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
            out << (i ? "," : "") << buf;
        }
        out << "\n";
    }
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw MissingArtifactError("cannot open: " + path);
    CsvTable table;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (line.back() == ',') fields.emplace_back();
        if (line_no == 1) {
            table.header = fields;
            continue;
        }
        std::vector<double> row;
        row.reserve(fields.size());
        for (const auto& f : fields) {
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc() || ptr != f.data() + f.size()) {
                throw InvalidInputError(path + ": line " + std::to_string(line_no) +
                                        ": not a number: '" + f + "'");
            }
            row.push_back(v);
        }
        if (!table.rows.empty() && row.size() != table.rows.front().size()) {
            throw InvalidInputError(path + ": line " + std::to_string(line_no) +
                                    ": inconsistent column count");
        }
        table.rows.push_back(std::move(row));
    }
    if (line_no == 0) throw InvalidInputError(path + ": empty file");
    return table;
}

}  // namespace tcformer::io
