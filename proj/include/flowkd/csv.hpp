#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "flowkd/errors.hpp"

namespace flowkd {

// Deterministic CSV formatting: doubles are printed with %.17g so identical
// runs produce byte-identical files.
inline std::string csv_double(double x) {
    if (std::isnan(x)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header) : os_(path) {
        if (!os_) throw DataError("csv: cannot write " + path);
        for (size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
        os_ << "\n";
    }

    void row(const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
        os_ << "\n";
    }

    void flush() { os_.flush(); }

private:
    std::ofstream os_;
};

}  // namespace flowkd
