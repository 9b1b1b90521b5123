#include "fedmp/report_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>

#include "fedmp/errors.hpp"
#include "fedmp/text.hpp"

namespace fedmp {

using nlohmann::ordered_json;

namespace {

ordered_json opt(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::optional<double> opt_double(const ordered_json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

std::string csv_opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

ordered_json gme_to_json(const GMEReport& rep, const std::string& config_hash) {
    ordered_json doc;
    doc["config_hash"] = config_hash;
    doc["method"] = rep.method;
    doc["rho"] = opt(rep.rho);
    ordered_json bands = ordered_json::array();
    for (const auto& b : rep.bands) {
        ordered_json jb;
        jb["range"] = b.band.label();
        jb["lo"] = b.band.lo;
        jb["hi"] = b.band.hi;
        jb["n"] = b.n;
        jb["acc_unlearned"] = opt(b.acc_unlearned);
        jb["acc_retrained"] = opt(b.acc_retrained);
        jb["delta"] = opt(b.delta);
        bands.push_back(jb);
    }
    doc["bands"] = bands;
    doc["unlearn"] = {{"acc_unlearned", rep.unlearn_acc_unlearned},
                      {"acc_retrained", rep.unlearn_acc_retrained},
                      {"delta", rep.unlearn_delta}};
    doc["test"] = {{"acc_unlearned", rep.test_acc_unlearned}, {"acc_retrained", rep.test_acc_retrained}};
    doc["local_fairness"] = opt(rep.local_fairness);
    doc["rounds_to_peak_unlearned"] =
        rep.peak_unlearned ? ordered_json(rep.peak_unlearned->rounds) : ordered_json(nullptr);
    doc["rounds_to_peak_retrained"] =
        rep.peak_retrained ? ordered_json(rep.peak_retrained->rounds) : ordered_json(nullptr);
    return doc;
}

GMEReport gme_from_json(const ordered_json& doc) {
    try {
        GMEReport rep;
        rep.method = doc.at("method").get<std::string>();
        rep.rho = opt_double(doc.at("rho"));
        for (const auto& jb : doc.at("bands")) {
            BandResult b;
            b.band = {jb.at("lo").get<double>(), jb.at("hi").get<double>()};
            b.n = jb.at("n").get<std::size_t>();
            b.acc_unlearned = opt_double(jb.at("acc_unlearned"));
            b.acc_retrained = opt_double(jb.at("acc_retrained"));
            b.delta = opt_double(jb.at("delta"));
            rep.bands.push_back(b);
        }
        rep.unlearn_acc_unlearned = doc.at("unlearn").at("acc_unlearned").get<double>();
        rep.unlearn_acc_retrained = doc.at("unlearn").at("acc_retrained").get<double>();
        rep.unlearn_delta = doc.at("unlearn").at("delta").get<double>();
        rep.test_acc_unlearned = doc.at("test").at("acc_unlearned").get<double>();
        rep.test_acc_retrained = doc.at("test").at("acc_retrained").get<double>();
        rep.local_fairness = opt_double(doc.at("local_fairness"));
        if (!doc.at("rounds_to_peak_unlearned").is_null()) {
            rep.peak_unlearned = PeakTime{doc["rounds_to_peak_unlearned"].get<std::size_t>(), 0.0};
        }
        if (!doc.at("rounds_to_peak_retrained").is_null()) {
            rep.peak_retrained = PeakTime{doc["rounds_to_peak_retrained"].get<std::size_t>(), 0.0};
        }
        return rep;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed GME report: ") + e.what());
    }
}

std::string gme_to_json_text(const GMEReport& rep, const std::string& config_hash) {
    return gme_to_json(rep, config_hash).dump(2) + "\n";
}

GMEReport read_gme_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return gme_from_json(ordered_json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string gme_bands_csv(const GMEReport& rep, const std::string& config_hash) {
    std::ostringstream out;
    out << "# config_hash=" << config_hash << '\n';
    out << "method,range,n,acc_unlearned,acc_retrained,delta\n";
    for (const auto& b : rep.bands) {
        out << rep.method << ",\"" << b.band.label() << "\"," << b.n << ',' << csv_opt(b.acc_unlearned) << ','
            << csv_opt(b.acc_retrained) << ',' << csv_opt(b.delta) << '\n';
    }
    return out.str();
}

std::string memscore_csv(const MemScoreTable& table, const std::string& config_hash) {
    std::ostringstream out;
    out << "# config_hash=" << config_hash << '\n';
    out << "id,score,band\n";
    for (std::size_t i = 0; i < table.ids.size(); ++i) {
        const int b = table.band_of[i];
        out << table.ids[i] << ',' << format_double(table.scores[i]) << ','
            << (b >= 0 ? "\"" + table.bands[static_cast<std::size_t>(b)].label() + "\"" : std::string()) << '\n';
    }
    return out.str();
}

std::string history_csv(std::span<const HistoryPoint> history, const std::string& config_hash) {
    std::ostringstream out;
    out << "# config_hash=" << config_hash << '\n';
    out << "round,test_acc,unlearn_acc,elapsed_s\n";
    for (const auto& h : history) {
        out << h.round << ',' << format_double(h.test_accuracy) << ',' << csv_opt(h.unlearn_accuracy) << ','
            << format_double(h.elapsed_s) << '\n';
    }
    return out.str();
}

std::string path_csv(std::span<const PathPoint> curve) {
    std::ostringstream out;
    out << "t,loss\n";
    for (const auto& p : curve) out << format_double(p.t) << ',' << format_double(p.loss) << '\n';
    return out.str();
}

namespace {

struct Row {
    std::string method;
    std::optional<double> rho;
    std::vector<std::optional<double>> values;
};

std::string fixed(const std::optional<double>& v, int precision = 4) {
    if (!v) return "-";
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << *v;
    return s.str();
}

}  // namespace

ComparisonTable compare_reports(std::span<const GMEReport> reports) {
    if (reports.size() < 2) throw ConfigError("compare needs at least two reports");
    const auto& ref_bands = reports.front().bands;
    for (const auto& r : reports) {
        bool same = r.bands.size() == ref_bands.size();
        for (std::size_t b = 0; same && b < ref_bands.size(); ++b) same = r.bands[b].band == ref_bands[b].band;
        if (!same) throw ConfigError("report '" + r.method + "' uses different band definitions");
    }

    std::vector<std::string> columns;
    for (const auto& b : ref_bands) columns.push_back("delta " + b.band.label());
    for (const char* c : {"unlearn_delta", "test_acc", "local_fairness", "rounds_to_peak"}) columns.emplace_back(c);

    std::vector<Row> rows;
    for (const auto& r : reports) {
        Row row{r.method, r.rho, {}};
        for (const auto& b : r.bands) row.values.push_back(b.delta);
        row.values.push_back(r.unlearn_delta);
        row.values.push_back(r.test_acc_unlearned);
        row.values.push_back(r.local_fairness);
        row.values.push_back(r.peak_unlearned ? std::optional<double>(static_cast<double>(r.peak_unlearned->rounds))
                                              : std::nullopt);
        rows.push_back(std::move(row));
    }
    const bool all_rho = std::all_of(rows.begin(), rows.end(), [](const Row& r) { return r.rho.has_value(); });
    if (all_rho) {
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return *a.rho < *b.rho; });
    }

    auto diff = [&](const Row& row, std::size_t c) -> std::optional<double> {
        const auto& a = row.values[c];
        const auto& b = rows.front().values[c];
        if (!a || !b) return std::nullopt;
        return *a - *b;
    };

    std::ostringstream csv;
    csv << "method,rho";
    for (const auto& c : columns) csv << ",\"" << c << "\"";
    for (const auto& c : columns) csv << ",\"diff " << c << "\"";
    csv << '\n';
    for (const auto& row : rows) {
        csv << row.method << ',' << csv_opt(row.rho);
        for (const auto& v : row.values) csv << ',' << csv_opt(v);
        for (std::size_t c = 0; c < columns.size(); ++c) csv << ',' << csv_opt(diff(row, c));
        csv << '\n';
    }

    std::ostringstream text;
    std::size_t name_w = 6;
    for (const auto& row : rows) name_w = std::max(name_w, row.method.size());
    text << std::left << std::setw(static_cast<int>(name_w) + 2) << "method" << std::setw(7) << "rho";
    for (const auto& c : columns) text << std::setw(static_cast<int>(std::max<std::size_t>(c.size(), 8)) + 2) << c;
    text << '\n';
    for (const auto& row : rows) {
        text << std::left << std::setw(static_cast<int>(name_w) + 2) << row.method << std::setw(7)
             << fixed(row.rho, 2);
        for (std::size_t c = 0; c < columns.size(); ++c) {
            text << std::setw(static_cast<int>(std::max<std::size_t>(columns[c].size(), 8)) + 2)
                 << fixed(row.values[c]);
        }
        text << '\n';
    }
    return {csv.str(), text.str()};
}

}  // namespace fedmp
