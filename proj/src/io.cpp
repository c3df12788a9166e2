#include "cste/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "cste/error.hpp"

namespace cste::io {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double x = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, x);
    if (ec != std::errc() || ptr != last || !std::isfinite(x)) return std::nullopt;
    return x;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

// Reads one record, continuing across newlines inside quotes.
bool read_record(std::istream& in, std::string& record) {
    record.clear();
    std::string line;
    bool any = false;
    while (std::getline(in, line)) {
        if (any) record += '\n';
        record += line;
        any = true;
        const auto quotes = std::count(record.begin(), record.end(), '"');
        if (quotes % 2 == 0) break;
    }
    if (!record.empty() && record.back() == '\r') record.pop_back();
    return any;
}

struct Column {
    std::string name;
    std::vector<std::string> cells;
};

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string s = "\"";
    for (char c : field) {
        if (c == '"') s += '"';
        s += c;
    }
    return s + '"';
}

std::string format_exact(double x) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, ptr);
}

std::string format_short(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

Ingested ingest(const std::string& path, const ColumnRoles& roles) {
    std::ifstream in(path);
    if (!in) throw DataError("cli.unreadable_input", "cannot open input file '" + path + "'");
    return ingest(in, roles);
}

Ingested ingest(std::istream& in, const ColumnRoles& roles) {
    if (roles.outcome.empty() || roles.treatment.empty())
        throw ArgumentError("cli.missing_role", "outcome and treatment columns are required");
    if (roles.z.empty()) throw ArgumentError("cli.missing_role", "at least one Z column is required");

    std::string record;
    if (!read_record(in, record) || trim(record).empty()) throw DataError("cli.empty_file", "input file is empty");
    std::vector<Column> cols;
    for (auto& h : split_csv_line(record)) cols.push_back({trim(h), {}});
    std::map<std::string, std::size_t> index;
    for (std::size_t j = 0; j < cols.size(); ++j) index.emplace(cols[j].name, j);

    auto lookup = [&](const std::string& name) {
        const auto it = index.find(name);
        if (it == index.end()) throw ArgumentError("cli.unknown_column", "unknown column '" + name + "'");
        return it->second;
    };
    const std::size_t jy = lookup(roles.outcome);
    const std::size_t jt = lookup(roles.treatment);
    std::vector<std::size_t> jz, jv;
    for (const auto& s : roles.z) jz.push_back(lookup(s));
    if (roles.v.empty()) {
        for (std::size_t j = 0; j < cols.size(); ++j)
            if (j != jy && j != jt && std::find(jz.begin(), jz.end(), j) == jz.end()) jv.push_back(j);
    } else {
        for (const auto& s : roles.v) jv.push_back(lookup(s));
    }
    for (const auto& s : roles.categorical) lookup(s);
    for (const auto& s : roles.continuous) lookup(s);

    std::vector<std::size_t> used{jy, jt};
    used.insert(used.end(), jz.begin(), jz.end());
    used.insert(used.end(), jv.begin(), jv.end());

    Ingested result;
    IngestReport& rep = result.report;
    while (read_record(in, record)) {
        if (trim(record).empty()) continue;
        auto cells = split_csv_line(record);
        ++rep.rows_read;
        if (cells.size() != cols.size())
            throw DataError("cli.malformed_csv", "row " + std::to_string(rep.rows_read) + " has " +
                                                     std::to_string(cells.size()) + " fields, expected " +
                                                     std::to_string(cols.size()));
        bool missing = false;
        for (std::size_t j : used) missing = missing || trim(cells[j]).empty();
        if (missing) {
            ++rep.rows_dropped;
            continue;
        }
        for (std::size_t j : used) cols[j].cells.push_back(trim(cells[j]));
    }
    if (rep.rows_read == 0) throw DataError("cli.empty_file", "input file has no data rows");
    const auto n = static_cast<Eigen::Index>(cols[jy].cells.size());
    if (n == 0) throw DataError("data.empty", "no complete rows remain after dropping missing values");

    auto numeric = [&](std::size_t j) {
        Eigen::VectorXd x(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto v = parse_number(cols[j].cells[static_cast<std::size_t>(i)]);
            if (!v) return std::optional<Eigen::VectorXd>{};
            x[i] = *v;
        }
        return std::optional<Eigen::VectorXd>{std::move(x)};
    };
    auto levels_of = [&](std::size_t j) {
        std::set<std::string> s(cols[j].cells.begin(), cols[j].cells.end());
        return std::vector<std::string>(s.begin(), s.end());
    };
    // Numeric level order, falling back to text order.
    auto sorted_levels = [&](std::size_t j) {
        auto lv = levels_of(j);
        std::vector<std::pair<double, std::string>> keyed;
        bool all_numeric = true;
        for (auto& l : lv) {
            const auto v = parse_number(l);
            all_numeric = all_numeric && v.has_value();
            keyed.emplace_back(v.value_or(0.0), l);
        }
        if (all_numeric) {
            std::sort(keyed.begin(), keyed.end());
            for (std::size_t k = 0; k < lv.size(); ++k) lv[k] = keyed[k].second;
        }
        return lv;
    };
    auto is_categorical = [&](std::size_t j, const std::optional<Eigen::VectorXd>& num) {
        const std::string& name = cols[j].name;
        if (contains(roles.categorical, name)) return true;
        if (!num) {
            if (contains(roles.continuous, name))
                throw DataError("cli.non_numeric", "column '" + name + "' is not numeric");
            return true;
        }
        if (contains(roles.continuous, name)) return false;
        const auto levels = levels_of(j).size();
        if (levels <= 2 || levels > static_cast<std::size_t>(kCategoricalMaxLevels)) return false;
        return ((*num).array() == (*num).array().round()).all();
    };

    Dataset& d = result.data;
    d.y_name = cols[jy].name;
    d.t_name = cols[jt].name;
    {
        auto y = numeric(jy);
        if (!y) throw DataError("cli.non_numeric", "outcome column '" + cols[jy].name + "' is not numeric");
        d.y = std::move(*y);
        auto t = numeric(jt);
        if (!t) throw DataError("data.non_binary_treatment", "treatment column must be coded 0/1");
        for (Eigen::Index i = 0; i < n; ++i)
            if ((*t)[i] != 0.0 && (*t)[i] != 1.0)
                throw DataError("data.non_binary_treatment",
                                "treatment column '" + cols[jt].name + "' contains " + format_exact((*t)[i]));
        d.t = std::move(*t);
    }

    d.z.resize(n, static_cast<Eigen::Index>(jz.size()));
    for (std::size_t k = 0; k < jz.size(); ++k) {
        const std::size_t j = jz[k];
        d.z_names.push_back(cols[j].name);
        auto num = numeric(j);
        if (num && !contains(roles.categorical, cols[j].name)) {
            d.z.col(static_cast<Eigen::Index>(k)) = *num;
            continue;
        }
        const auto lv = sorted_levels(j);
        std::map<std::string, int> code;
        for (std::size_t l = 0; l < lv.size(); ++l) code[lv[l]] = static_cast<int>(l);
        for (Eigen::Index i = 0; i < n; ++i)
            d.z(i, static_cast<Eigen::Index>(k)) = code[cols[j].cells[static_cast<std::size_t>(i)]];
        rep.categorical.push_back({cols[j].name, lv});
    }

    std::vector<Eigen::VectorXd> vcols;
    for (std::size_t j : jv) {
        auto num = numeric(j);
        if (!is_categorical(j, num)) {
            vcols.push_back(std::move(*num));
            d.v_names.push_back(cols[j].name);
            continue;
        }
        const auto lv = sorted_levels(j);
        rep.categorical.push_back({cols[j].name, lv});
        for (std::size_t l = 1; l < lv.size(); ++l) {
            Eigen::VectorXd x(n);
            for (Eigen::Index i = 0; i < n; ++i) x[i] = cols[j].cells[static_cast<std::size_t>(i)] == lv[l] ? 1.0 : 0.0;
            vcols.push_back(std::move(x));
            d.v_names.push_back(cols[j].name + "=" + lv[l]);
        }
    }
    d.v.resize(n, static_cast<Eigen::Index>(vcols.size()));
    for (std::size_t k = 0; k < vcols.size(); ++k) d.v.col(static_cast<Eigen::Index>(k)) = vcols[k];
    d.validate();
    return result;
}

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
    auto opt = [](double x) { return std::isnan(x) ? std::string() : format_exact(x); };
    out << "method,target,z0,point,se,level,ci_lo,ci_hi,lambda_ps,lambda_or,approximate,clamped\n";
    for (const auto& r : rows) {
        std::string z;
        for (std::size_t k = 0; k < r.z0.size(); ++k) z += (k ? ":" : "") + format_exact(r.z0[k]);
        out << csv_escape(r.method) << ',' << csv_escape(r.target) << ',' << z << ',' << format_exact(r.point) << ','
            << format_exact(r.se) << ',' << format_exact(r.level) << ',' << format_exact(r.ci_lo) << ','
            << format_exact(r.ci_hi) << ',' << opt(r.lambda_ps) << ',' << opt(r.lambda_or) << ',' << (r.approximate ? 1 : 0) << ',' << (r.clamped ? 1 : 0) << '\n';
    }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
    std::string record;
    if (!read_record(in, record)) throw DataError("cli.empty_file", "results file is empty");
    std::vector<ResultRow> rows;
    auto num = [](const std::string& s) {
        const auto v = parse_number(s);
        if (!v) throw DataError("cli.malformed_csv", "bad number '" + s + "' in results file");
        return *v;
    };
    while (read_record(in, record)) {
        if (record.empty()) continue;
        const auto f = split_csv_line(record);
        if (f.size() != 12) throw DataError("cli.malformed_csv", "results row has the wrong field count");
        ResultRow r;
        r.method = f[0];
        r.target = f[1];
        std::stringstream zs(f[2]);
        std::string part;
        while (std::getline(zs, part, ':')) r.z0.push_back(num(part));
        r.point = num(f[3]);
        r.se = num(f[4]);
        r.level = num(f[5]);
        r.ci_lo = num(f[6]);
        r.ci_hi = num(f[7]);
        if (!f[8].empty()) r.lambda_ps = num(f[8]);
        if (!f[9].empty()) r.lambda_or = num(f[9]);
        r.approximate = f[10] == "1";
        r.clamped = f[11] == "1";
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cli.unwritable_output", "cannot write '" + path + "'");
    out << contents;
    if (!out) throw DataError("cli.unwritable_output", "failed writing '" + path + "'");
}

}  // namespace cste::io
