#include "avdg/report.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "avdg/decoding.hpp"
#include "avdg/detection.hpp"
#include "avdg/errors.hpp"
#include "avdg/pipeline.hpp"
#include "avdg/synthetic.hpp"

namespace avdg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
}

struct TokenRow {
    std::size_t position = 0;
    Token token = 0;
    bool anchor = false;
    double nll = 0.0;
    double perplexity = 0.0;
};

// Rows of <label>.tokens.csv grouped by example, in file order.
std::vector<std::pair<std::string, std::vector<TokenRow>>> read_token_table(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != "example_id,position,token,anchor,nll,perplexity") throw ParseError(path.string() + ": unexpected header", 1);
    std::vector<std::pair<std::string, std::vector<TokenRow>>> out;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 6) throw ParseError(path.string() + ": expected 6 fields", line_no);
        TokenRow r;
        try {
            r.position = std::stoul(f[1]);
            r.token = static_cast<Token>(std::stol(f[2]));
            r.anchor = f[3] == "1";
            r.nll = std::stod(f[4]);
            r.perplexity = std::stod(f[5]);
        } catch (const std::exception&) {
            throw ParseError(path.string() + ": bad number", line_no);
        }
        if (out.empty() || out.back().first != f[0]) out.emplace_back(f[0], std::vector<TokenRow>{});
        out.back().second.push_back(r);
    }
    return out;
}

std::string safe_name(const std::string& s) {
    std::string out = s;
    for (char& ch : out) {
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    }
    return out;
}

}  // namespace

std::string bar_chart_svg(const std::string& title, const std::string& y_label, const std::vector<ChartBar>& bars) {
    constexpr double kBarWidth = 28.0, kGap = 6.0, kLeft = 56.0, kTop = 36.0, kPlotHeight = 200.0, kBottom = 48.0;
    double max_value = 0.0;
    for (const auto& b : bars) max_value = std::max(max_value, b.value);
    const double scale = max_value > 0.0 ? kPlotHeight / max_value : 1.0;
    const double width = kLeft + static_cast<double>(bars.size()) * (kBarWidth + kGap) + 24.0;
    const double height = kTop + kPlotHeight + kBottom;
    const double base = kTop + kPlotHeight;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
       << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\" data-scale=\"" << num(scale) << "\">\n";
    os << "  <title>" << escape_xml(title) << "</title>\n";
    os << "  <rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height) << "\" fill=\"white\"/>\n";
    os << "  <text x=\"" << num(kLeft) << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">"
       << escape_xml(title) << "</text>\n";
    os << "  <text x=\"14\" y=\"" << num(kTop + kPlotHeight / 2) << "\" font-family=\"sans-serif\" font-size=\"11\" "
       << "transform=\"rotate(-90 14 " << num(kTop + kPlotHeight / 2) << ")\" text-anchor=\"middle\">"
       << escape_xml(y_label) << "</text>\n";
    os << "  <line x1=\"" << num(kLeft - 4) << "\" y1=\"" << num(base) << "\" x2=\"" << num(width - 12) << "\" y2=\""
       << num(base) << "\" stroke=\"black\"/>\n";
    os << "  <text x=\"" << num(kLeft - 8) << "\" y=\"" << num(kTop + 4) << "\" font-family=\"sans-serif\" "
       << "font-size=\"10\" text-anchor=\"end\">" << fixed(max_value, 2) << "</text>\n";
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const auto& b = bars[i];
        const double x = kLeft + static_cast<double>(i) * (kBarWidth + kGap);
        const double h = b.value * scale;
        os << "  <rect class=\"bar" << (b.anchor ? " anchor" : "") << "\" x=\"" << num(x) << "\" y=\""
           << num(base - h) << "\" width=\"" << num(kBarWidth) << "\" height=\"" << num(h) << "\" fill=\""
           << (b.anchor ? "#d62728" : "#1f77b4") << "\" data-position=\"" << b.position << "\" data-token=\""
           << escape_xml(b.token) << "\" data-anchor=\"" << (b.anchor ? 1 : 0) << "\" data-value=\"" << num(b.value)
           << "\"/>\n";
        os << "  <text x=\"" << num(x + kBarWidth / 2) << "\" y=\"" << num(base + 14)
           << "\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">" << escape_xml(b.token)
           << "</text>\n";
    }
    os << "  <rect x=\"" << num(kLeft) << "\" y=\"" << num(height - 20) << "\" width=\"10\" height=\"10\" "
       << "fill=\"#d62728\"/>\n";
    os << "  <text x=\"" << num(kLeft + 14) << "\" y=\"" << num(height - 11)
       << "\" font-family=\"sans-serif\" font-size=\"10\">anchor token</text>\n";
    os << "</svg>\n";
    return os.str();
}

ReportBundle emit_report(const fs::path& run_dir) {
    if (!fs::exists(run_dir / "manifest.json")) throw IoError("missing artifacts: manifest.json");
    const Manifest manifest = load_manifest(run_dir);
    const DetectionSettings detection = parse_detection_settings(manifest.config.at("detection"));
    const std::size_t n_examples = manifest.config.at("report").at("examples").get<std::size_t>();
    const auto models = model_labels(detection);
    const auto weights = weight_labels(detection);

    std::vector<std::string> needed{"data/train.jsonl"};
    for (const auto& w : weights) {
        needed.push_back("weights/" + w + ".jsonl");
        needed.push_back("weights/" + w + ".quality.json");
    }
    for (const auto& m : models) {
        needed.push_back("eval/" + m + ".metrics.json");
        needed.push_back("eval/" + m + ".tokens.csv");
    }
    std::string missing;
    for (const auto& rel : needed) {
        if (!fs::exists(run_dir / rel)) missing += (missing.empty() ? "" : ", ") + rel;
    }
    if (!missing.empty()) throw IoError("missing artifacts: " + missing);

    ReportBundle bundle;
    const auto emit = [&](const std::string& rel, const std::string& text) {
        write_text(run_dir / rel, text);
        bundle.files.push_back(rel);
    };
    std::ostringstream md;
    md << "# Run report\n\n";

    // Metrics table.
    std::map<std::string, std::map<std::string, double>> metrics;
    for (const auto& m : models) metrics[m] = read_eval_metrics(run_dir / "eval" / (m + ".metrics.json"));
    std::vector<std::string> columns;
    for (const auto& [k, v] : metrics.at(models.front())) columns.push_back(k);
    {
        std::ostringstream csv;
        csv << "model";
        for (const auto& k : columns) csv << ',' << k;
        csv << '\n';
        md << "## Generation metrics (test split)\n\n| model |";
        for (const auto& k : columns) md << ' ' << k << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < columns.size(); ++i) md << "---|";
        md << '\n';
        for (const auto& m : models) {
            csv << m;
            md << "| " << m << " |";
            for (const auto& k : columns) {
                const auto it = metrics[m].find(k);
                if (it == metrics[m].end()) throw IoError("eval/" + m + ".metrics.json lacks " + k);
                csv << ',' << num(it->second);
                md << ' ' << fixed(it->second, 4) << " |";
            }
            csv << '\n';
            md << '\n';
        }
        emit("report/metrics.csv", csv.str());
    }

    // Detection table.
    {
        std::ostringstream csv;
        csv << "weights,auc,precision_at_k,k\n";
        md << "\n## Detection quality (training split, unsmoothed degrees)\n\n| weights | AUC | precision@k | k |\n"
           << "|---|---|---|---|\n";
        for (const auto& w : weights) {
            std::ifstream is(run_dir / "weights" / (w + ".quality.json"));
            const json q = json::parse(is);
            const auto cell = [](const json& v) { return v.is_null() ? std::string("NA") : num(v.get<double>()); };
            const auto pretty = [](const json& v) { return v.is_null() ? std::string("NA") : fixed(v.get<double>(), 4); };
            csv << "W_" << w << ',' << cell(q.at("auc")) << ',' << cell(q.at("precision_at_k")) << ','
                << q.at("k").get<std::size_t>() << '\n';
            md << "| W_" << w << " | " << pretty(q.at("auc")) << " | " << pretty(q.at("precision_at_k")) << " | "
               << q.at("k").get<std::size_t>() << " |\n";
        }
        emit("report/detection.csv", csv.str());
    }

    // Per-token perplexity charts on the first test examples.
    md << "\n## Per-token perplexity (test examples)\n\n";
    for (const auto& m : models) {
        const auto table = read_token_table(run_dir / "eval" / (m + ".tokens.csv"));
        for (std::size_t e = 0; e < std::min(n_examples, table.size()); ++e) {
            const auto& [id, rows] = table[e];
            std::vector<ChartBar> bars;
            for (const auto& r : rows) bars.push_back({r.position, std::to_string(r.token), r.anchor, r.perplexity});
            const std::string rel = "report/charts/ppl_" + safe_name(m) + "_" + safe_name(id) + ".svg";
            emit(rel, bar_chart_svg(m + " / " + id, "token perplexity", bars));
            md << "- [" << m << " / " << id << "](" << rel.substr(7) << ")\n";
        }
    }

    // Anchor-degree charts on the first training examples.
    md << "\n## Anchor degrees (training examples)\n\n";
    const Dataset train_set = load_dataset(run_dir / "data/train.jsonl");
    std::map<std::string, const VDGExample*> by_id;
    for (const auto& ex : train_set) by_id[ex.id] = &ex;
    for (const auto& w : weights) {
        const auto all = load_weights(run_dir / "weights" / (w + ".jsonl"));
        for (std::size_t e = 0; e < std::min(n_examples, all.size()); ++e) {
            const auto& aw = all[e];
            const auto it = by_id.find(aw.example_id);
            if (it == by_id.end()) throw IoError("weights/" + w + ".jsonl names unknown example " + aw.example_id);
            const VDGExample& ex = *it->second;
            std::vector<ChartBar> bars;
            for (std::size_t t = 0; t < aw.weights.size(); ++t) {
                bars.push_back({t + 1, std::to_string(ex.answer[t]), static_cast<bool>(ex.anchor_mask[t]), aw.weights[t]});
            }
            const std::string rel = "report/charts/weights_" + safe_name(w) + "_" + safe_name(aw.example_id) + ".svg";
            emit(rel, bar_chart_svg("W_" + w + " / " + aw.example_id, "anchor degree", bars));
            md << "- [W_" << w << " / " << aw.example_id << "](" << rel.substr(7) << ")\n";
        }
    }
    emit("report/report.md", md.str());
    return bundle;
}

}  // namespace avdg
