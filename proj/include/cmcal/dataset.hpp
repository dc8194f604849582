#ifndef CMCAL_DATASET_HPP
#define CMCAL_DATASET_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cmcal/core.hpp"
#include "cmcal/metrics.hpp"

namespace cmcal {

/// Parse failure; the message names the offending line.
class ParseError : public InvalidInput {
public:
  ParseError(std::size_t line, const std::string& what)
      : InvalidInput("line " + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

enum class ScoreFormat { Logits, Probs };
enum class FileFormat { Csv, Jsonl };

inline std::string_view to_string(ScoreFormat f) { return f == ScoreFormat::Logits ? "logits" : "probs"; }

/// Predictions with labels; logits are converted to probabilities on load.
struct LogitDataset {
  ScoreFormat source_format = ScoreFormat::Probs;
  std::size_t num_classes = 0;
  std::vector<ProbVector> probs;
  std::vector<std::size_t> labels;

  [[nodiscard]] std::size_t size() const noexcept { return probs.size(); }
  [[nodiscard]] EvalBatch batch() const { return {probs, labels}; }

  [[nodiscard]] EvalBatch subset(const std::vector<std::size_t>& indices) const {
    std::vector<ProbVector> p;
    std::vector<std::size_t> y;
    p.reserve(indices.size());
    y.reserve(indices.size());
    for (std::size_t i : indices) {
      p.push_back(probs[i]);
      y.push_back(labels[i]);
    }
    return {std::move(p), std::move(y)};
  }
};

namespace detail {

inline double parse_number(std::string_view tok, std::size_t line) {
  const std::string s(tok);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError(line, "cannot parse number '" + s + "'");
  }
  while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
  if (used != s.size()) throw ParseError(line, "cannot parse number '" + s + "'");
  if (!std::isfinite(v)) throw ParseError(line, "non-finite value");
  return v;
}

inline std::size_t parse_label(double v, std::size_t k, std::size_t line) {
  if (v < 0.0 || v != std::floor(v) || v >= static_cast<double>(k)) {
    throw ParseError(line, "label " + format_double(v) + " out of range for K=" + std::to_string(k));
  }
  return static_cast<std::size_t>(v);
}

inline void add_row(LogitDataset& ds, std::vector<double> values, std::size_t label, std::size_t line) {
  try {
    ds.probs.push_back(ds.source_format == ScoreFormat::Logits ? softmax(values)
                                                               : ProbVector::ingest(std::move(values)));
  } catch (const InvalidInput& e) {
    throw ParseError(line, e.what());
  }
  ds.labels.push_back(label);
}

inline ScoreFormat parse_score_format(std::string_view s, std::size_t line) {
  if (s == "logits") return ScoreFormat::Logits;
  if (s == "probs") return ScoreFormat::Probs;
  throw ParseError(line, "format must be logits or probs");
}

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace detail

/**
 * CSV layout: a header line "format=logits|probs,K=<int>" followed by one row
 * per sample with K comma-separated scores and the integer label.
 */
inline LogitDataset read_csv(std::istream& in) {
  LogitDataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(detail::trim(f));

    if (!have_header) {
      bool got_format = false;
      for (const auto& f : fields) {
        const auto eq = f.find('=');
        if (eq == std::string::npos) throw ParseError(lineno, "malformed header field '" + f + "'");
        const std::string key = f.substr(0, eq);
        const std::string value = f.substr(eq + 1);
        if (key == "format") {
          ds.source_format = detail::parse_score_format(value, lineno);
          got_format = true;
        } else if (key == "K") {
          const double k = detail::parse_number(value, lineno);
          if (k < 2 || k != std::floor(k)) throw ParseError(lineno, "K must be an integer >= 2");
          ds.num_classes = static_cast<std::size_t>(k);
        } else {
          throw ParseError(lineno, "unknown header key '" + key + "'");
        }
      }
      if (!got_format || ds.num_classes == 0) throw ParseError(lineno, "header needs format and K");
      have_header = true;
      continue;
    }

    if (fields.size() != ds.num_classes + 1) {
      throw ParseError(lineno, "expected " + std::to_string(ds.num_classes + 1) + " fields, got " +
                                   std::to_string(fields.size()));
    }
    std::vector<double> values(ds.num_classes);
    for (std::size_t k = 0; k < ds.num_classes; ++k) values[k] = detail::parse_number(fields[k], lineno);
    const std::size_t label =
        detail::parse_label(detail::parse_number(fields.back(), lineno), ds.num_classes, lineno);
    detail::add_row(ds, std::move(values), label, lineno);
  }
  if (!have_header) throw ParseError(lineno, "missing header line");
  if (ds.probs.empty()) throw ParseError(lineno, "no data rows");
  return ds;
}

/**
 * JSONL layout: a header object {"format": "logits"|"probs", "K": <int>}, then
 * one object per sample {"values": [...], "label": <int>}.
 */
inline LogitDataset read_jsonl(std::istream& in) {
  LogitDataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    try {
      if (!have_header) {
        ds.source_format = detail::parse_score_format(j.at("format").get<std::string>(), lineno);
        const auto k = j.at("K").get<long long>();
        if (k < 2) throw ParseError(lineno, "K must be >= 2");
        ds.num_classes = static_cast<std::size_t>(k);
        have_header = true;
        continue;
      }
      const auto& vals = j.at("values");
      if (!vals.is_array() || vals.size() != ds.num_classes) {
        throw ParseError(lineno, "expected " + std::to_string(ds.num_classes) + " values");
      }
      std::vector<double> values;
      for (const auto& v : vals) {
        if (!v.is_number()) throw ParseError(lineno, "non-numeric value");
        values.push_back(v.get<double>());
        if (!std::isfinite(values.back())) throw ParseError(lineno, "non-finite value");
      }
      const auto& lab = j.at("label");
      if (!lab.is_number()) throw ParseError(lineno, "label must be a number");
      const std::size_t label = detail::parse_label(lab.get<double>(), ds.num_classes, lineno);
      detail::add_row(ds, std::move(values), label, lineno);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  if (!have_header) throw ParseError(lineno, "missing header line");
  if (ds.probs.empty()) throw ParseError(lineno, "no data rows");
  return ds;
}

inline FileFormat guess_format(const std::string& path) {
  const auto ends_with = [&](std::string_view suffix) {
    return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".jsonl") || ends_with(".json") ? FileFormat::Jsonl : FileFormat::Csv;
}

inline LogitDataset load_dataset(const std::string& path, FileFormat format) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open dataset '" + path + "'");
  return format == FileFormat::Csv ? read_csv(in) : read_jsonl(in);
}

inline LogitDataset load_dataset(const std::string& path) { return load_dataset(path, guess_format(path)); }

/// Writes probabilities (format=probs) in the CSV layout accepted by read_csv.
inline void write_csv(std::ostream& out, const std::vector<ProbVector>& probs, const std::vector<std::size_t>& labels) {
  if (probs.empty() || probs.size() != labels.size()) throw InvalidInput("nothing to write");
  out << "format=probs,K=" << probs.front().size() << '\n';
  for (std::size_t i = 0; i < probs.size(); ++i) {
    for (double v : probs[i].values()) out << format_double(v) << ',';
    out << labels[i] << '\n';
  }
}

}  // namespace cmcal

#endif  // CMCAL_DATASET_HPP
