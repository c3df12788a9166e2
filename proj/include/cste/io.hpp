#pragma once

// CSV ingestion into a Dataset and the tabular result formats written by
// the command line front end.

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "cste/dataset.hpp"

namespace cste::io {

struct ColumnRoles {
    std::string outcome;
    std::string treatment;
    std::vector<std::string> z;
    std::vector<std::string> v;  // empty: every column not used elsewhere
    std::vector<std::string> categorical;  // force dummy coding
    std::vector<std::string> continuous;   // never dummy code
};

// Integer-valued columns with at most this many distinct values (and more
// than two) are treated as categorical unless overridden.
inline constexpr int kCategoricalMaxLevels = 20;

struct CategoricalColumn {
    std::string name;
    std::vector<std::string> levels;  // code k <-> levels[k]
};

struct IngestReport {
    long rows_read = 0;
    long rows_dropped = 0;  // missing value in a used column
    std::vector<CategoricalColumn> categorical;
};

struct Ingested {
    Dataset data;
    IngestReport report;
};

// Categorical Z columns are coded 0..L-1 in sorted level order. Categorical V
// columns expand to L-1 indicator columns named "<col>=<level>".
Ingested ingest(const std::string& path, const ColumnRoles& roles);
Ingested ingest(std::istream& in, const ColumnRoles& roles);

// Splits one CSV record (RFC 4180 quoting).
std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_escape(const std::string& field);

// Shortest text that parses back to the same double.
std::string format_exact(double x);
// Six significant digits.
std::string format_short(double x);

struct ResultRow {
    std::string method;
    std::string target;
    std::vector<double> z0;
    double point = 0.0;
    double se = 0.0;
    double level = 0.95;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double lambda_ps = std::numeric_limits<double>::quiet_NaN();  // NaN: not applicable
    double lambda_or = std::numeric_limits<double>::quiet_NaN();
    bool approximate = false;
    bool clamped = false;
};

// z0 components are joined with ':' in one field.
void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(std::istream& in);

void write_text_file(const std::string& path, const std::string& contents);

}  // namespace cste::io
