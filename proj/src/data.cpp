#include "bret/data.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bret {

namespace {

constexpr const char* kNegativesHeader = "# bret-negatives-v1";

[[noreturn]] void file_error(const std::string& path, const std::string& what) {
  throw std::runtime_error(path + ": " + what);
}

[[noreturn]] void line_error(const std::string& path, size_t lineno, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + what);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string> split_commas(const std::string& field) {
  std::vector<std::string> out;
  if (field.empty()) return out;
  size_t start = 0;
  while (true) {
    const size_t pos = field.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(field.substr(start));
      return out;
    }
    out.push_back(field.substr(start, pos - start));
    start = pos + 1;
  }
}

std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path);
  if (!in) file_error(path, "cannot open for reading");
  return in;
}

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path);
  if (!out) file_error(path, "cannot open for writing");
  return out;
}

long long parse_int(const std::string& path, size_t lineno, const std::string& field,
                    const char* what) {
  long long v = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
    line_error(path, lineno, std::string("malformed ") + what + " '" + field + "'");
  return v;
}

double parse_float(const std::string& path, size_t lineno, const std::string& field,
                   const char* what) {
  try {
    size_t pos = 0;
    const double v = std::stod(field, &pos);
    if (pos != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    line_error(path, lineno, std::string("malformed ") + what + " '" + field + "'");
  }
}

}  // namespace

const Passage& Corpus::at(const std::string& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw std::runtime_error("corpus: unknown passage id '" + id + "'");
  return passages[static_cast<size_t>(it->second)];
}

bool QrelSet::relevant(const std::string& qid, const std::string& pid) const {
  auto it = grades.find(qid);
  if (it == grades.end()) return false;
  auto jt = it->second.find(pid);
  return jt != it->second.end() && jt->second > 0;
}

const std::map<std::string, int>* QrelSet::for_query(const std::string& qid) const {
  auto it = grades.find(qid);
  return it == grades.end() ? nullptr : &it->second;
}

Corpus load_corpus(const std::string& path) {
  auto in = open_for_read(path);
  Corpus corpus;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3)
      line_error(path, lineno, "expected 3 tab-separated fields (id, title, text), got " +
                                   std::to_string(fields.size()));
    if (fields[0].empty()) line_error(path, lineno, "empty passage id");
    if (corpus.index.count(fields[0]))
      line_error(path, lineno, "duplicate passage id '" + fields[0] + "'");
    corpus.index.emplace(fields[0], corpus.size());
    corpus.passages.push_back({fields[0], fields[1], fields[2]});
  }
  return corpus;
}

QueryList load_queries(const std::string& path) {
  auto in = open_for_read(path);
  QueryList queries;
  std::unordered_map<std::string, int> seen;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 2)
      line_error(path, lineno, "expected 2 tab-separated fields (id, text), got " +
                                   std::to_string(fields.size()));
    if (fields[0].empty()) line_error(path, lineno, "empty query id");
    if (!seen.emplace(fields[0], 1).second)
      line_error(path, lineno, "duplicate query id '" + fields[0] + "'");
    queries.push_back({fields[0], fields[1]});
  }
  return queries;
}

QrelSet load_qrels(const std::string& path) {
  auto in = open_for_read(path);
  QrelSet qrels;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3)
      line_error(path, lineno, "expected 3 tab-separated fields (qid, pid, grade), got " +
                                   std::to_string(fields.size()));
    const long long grade = parse_int(path, lineno, fields[2], "grade");
    if (grade < 0) line_error(path, lineno, "negative grade");
    auto& row = qrels.grades[fields[0]];
    if (row.count(fields[1]))
      line_error(path, lineno, "duplicate judgment for (" + fields[0] + ", " + fields[1] + ")");
    row.emplace(fields[1], static_cast<int>(grade));
  }
  return qrels;
}

RetrievalRun load_run(const std::string& path) {
  auto in = open_for_read(path);
  RetrievalRun run;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4)
      line_error(path, lineno, "expected 4 tab-separated fields (qid, pid, rank, score), got " +
                                   std::to_string(fields.size()));
    const long long rank = parse_int(path, lineno, fields[2], "rank");
    const double score = parse_float(path, lineno, fields[3], "score");
    auto& ranked = run.ranked[fields[0]];
    if (rank != static_cast<long long>(ranked.size()) + 1)
      line_error(path, lineno, "rank " + fields[2] + " out of order for query '" + fields[0] + "'");
    for (const auto& [pid, s] : ranked) {
      (void)s;
      if (pid == fields[1])
        line_error(path, lineno, "duplicate passage '" + fields[1] + "' for query '" + fields[0] + "'");
    }
    if (!ranked.empty() && ranked.back().second < score)
      line_error(path, lineno, "scores increase at rank " + fields[2] + " for query '" + fields[0] + "'");
    ranked.emplace_back(fields[1], score);
  }
  return run;
}

void save_run(const std::string& path, const RetrievalRun& run) {
  auto out = open_for_write(path);
  for (const auto& [qid, ranked] : run.ranked) {
    for (size_t i = 0; i < ranked.size(); ++i)
      out << qid << '\t' << ranked[i].first << '\t' << i + 1 << '\t'
          << format_double(ranked[i].second) << '\n';
  }
  if (!out) file_error(path, "write failed");
}

void save_qrels(const std::string& path, const QrelSet& qrels) {
  auto out = open_for_write(path);
  for (const auto& [qid, row] : qrels.grades)
    for (const auto& [pid, grade] : row) out << qid << '\t' << pid << '\t' << grade << '\n';
  if (!out) file_error(path, "write failed");
}

std::vector<NegativeRecord> load_negatives(const std::string& path) {
  auto in = open_for_read(path);
  std::vector<NegativeRecord> records;
  std::unordered_map<std::string, int> seen;
  std::string line;
  size_t lineno = 0;
  if (!std::getline(in, line) || line != kNegativesHeader)
    file_error(path, "missing negatives header '" + std::string(kNegativesHeader) + "'");
  lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3 && fields.size() != 4)
      line_error(path, lineno, "expected 3 or 4 tab-separated fields, got " +
                                   std::to_string(fields.size()));
    NegativeRecord rec;
    rec.query_id = fields[0];
    if (rec.query_id.empty()) line_error(path, lineno, "empty query id");
    if (!seen.emplace(rec.query_id, 1).second)
      line_error(path, lineno, "duplicate query id '" + rec.query_id + "'");
    rec.positives = split_commas(fields[1]);
    rec.negatives = split_commas(fields[2]);
    if (rec.positives.empty()) line_error(path, lineno, "record has no positives");
    for (const auto& pos : rec.positives)
      for (const auto& neg : rec.negatives)
        if (pos == neg)
          line_error(path, lineno, "passage '" + pos + "' listed as both positive and negative");
    if (fields.size() == 4 && !fields[3].empty()) {
      for (const auto& s : split_commas(fields[3]))
        rec.teacher_scores.push_back(parse_float(path, lineno, s, "teacher score"));
      if (rec.teacher_scores.size() != rec.negatives.size() + 1)
        line_error(path, lineno, "expected " + std::to_string(rec.negatives.size() + 1) +
                                     " teacher scores, got " +
                                     std::to_string(rec.teacher_scores.size()));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_negatives(const std::string& path, const std::vector<NegativeRecord>& records) {
  auto out = open_for_write(path);
  out << kNegativesHeader << '\n';
  for (const auto& rec : records) {
    out << rec.query_id << '\t';
    for (size_t i = 0; i < rec.positives.size(); ++i) {
      if (i) out << ',';
      out << rec.positives[i];
    }
    out << '\t';
    for (size_t i = 0; i < rec.negatives.size(); ++i) {
      if (i) out << ',';
      out << rec.negatives[i];
    }
    if (!rec.teacher_scores.empty()) {
      out << '\t';
      for (size_t i = 0; i < rec.teacher_scores.size(); ++i) {
        if (i) out << ',';
        out << format_double(rec.teacher_scores[i]);
      }
    }
    out << '\n';
  }
  if (!out) file_error(path, "write failed");
}

std::string format_double(double v) {
  // Shortest representation that parses back to the same double.
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::stod(buf) == v) return buf;
  }
  return std::to_string(v);
}

}  // namespace bret
