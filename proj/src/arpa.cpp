#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "senti/ngram_lm.hpp"

namespace senti {

namespace {

const double kLn10 = std::log(10.0);
constexpr double kArpaZero = -99.0;

std::string format_log10(double ln_value) {
  if (ln_value == -std::numeric_limits<double>::infinity()) return "-99";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", ln_value / kLn10);
  return buf;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_double(std::string_view s, std::size_t line) {
  std::string tmp(s);
  char* end = nullptr;
  double v = std::strtod(tmp.c_str(), &end);
  if (end == tmp.c_str() || *end != '\0') throw ArpaParseError(line, "bad number '" + tmp + "'");
  return v;
}

}  // namespace

std::string export_arpa(const KneserNeyModel& model) {
  const Vocabulary& v = model.vocab();
  std::ostringstream out;
  out << "\\data\\\n";
  for (std::size_t k = 1; k <= model.order(); ++k)
    out << "ngram " << k << "=" << model.table(k).size() << "\n";
  for (std::size_t k = 1; k <= model.order(); ++k) {
    out << "\n\\" << k << "-grams:\n";
    std::vector<std::pair<std::vector<std::uint32_t>, const KneserNeyModel::Entry*>> rows;
    rows.reserve(model.table(k).size());
    for (const auto& [g, e] : model.table(k)) {
      std::vector<std::uint32_t> ids(k);
      for (std::size_t i = 0; i < k; ++i) ids[i] = g.at(i);
      rows.emplace_back(std::move(ids), &e);
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [ids, e] : rows) {
      out << format_log10(e->log_prob) << '\t';
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out << ' ';
        out << v.token(ids[i]);
      }
      if (e->has_bow && k < model.order()) out << '\t' << format_log10(e->log_bow);
      out << '\n';
    }
  }
  out << "\n\\end\\\n";
  return out.str();
}

KneserNeyModel import_arpa(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string_view>> lines;
  {
    std::size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      ++line_no;
      auto l = trim(text.substr(pos, nl - pos));
      if (!l.empty()) lines.emplace_back(line_no, l);
      pos = nl + 1;
    }
  }
  std::size_t i = 0;
  auto last_line = [&] { return lines.empty() ? std::size_t{1} : lines.back().first; };
  if (lines.empty() || lines[0].second != "\\data\\") throw ArpaParseError(lines.empty() ? 1 : lines[0].first, "expected \\data\\ header");
  ++i;

  std::vector<std::size_t> declared;
  while (i < lines.size() && lines[i].second.starts_with("ngram ")) {
    auto [no, l] = lines[i];
    auto eq = l.find('=');
    if (eq == std::string_view::npos) throw ArpaParseError(no, "malformed count line");
    auto k = static_cast<std::size_t>(parse_double(trim(l.substr(6, eq - 6)), no));
    auto n = static_cast<std::size_t>(parse_double(trim(l.substr(eq + 1)), no));
    if (k != declared.size() + 1) throw ArpaParseError(no, "ngram orders must be declared in sequence");
    declared.push_back(n);
    ++i;
  }
  if (declared.empty()) throw ArpaParseError(i < lines.size() ? lines[i].first : last_line(), "no ngram counts declared");
  if (declared.size() > kMaxNgramOrder) throw ArpaParseError(lines[i - 1].first, "order too large");
  const std::size_t order = declared.size();

  // Rows are collected first so that the vocabulary is known before packing.
  struct Row {
    double log_prob;
    std::vector<std::string_view> words;
    std::optional<double> bow;
  };
  std::vector<std::vector<Row>> sections(order);
  for (std::size_t k = 1; k <= order; ++k) {
    std::string header = "\\" + std::to_string(k) + "-grams:";
    if (i >= lines.size() || lines[i].second != header)
      throw ArpaParseError(i < lines.size() ? lines[i].first : last_line(), "expected section " + header);
    ++i;
    while (i < lines.size() && !lines[i].second.starts_with("\\")) {
      auto [no, l] = lines[i];
      auto fields = split_ws(l);
      if (fields.size() != k + 1 && fields.size() != k + 2)
        throw ArpaParseError(no, "section " + header + ": expected " + std::to_string(k) + " words");
      Row r;
      r.log_prob = parse_double(fields[0], no);
      r.words.assign(fields.begin() + 1, fields.begin() + 1 + static_cast<std::ptrdiff_t>(k));
      if (fields.size() == k + 2) r.bow = parse_double(fields.back(), no);
      sections[k - 1].push_back(std::move(r));
      ++i;
    }
    if (sections[k - 1].size() != declared[k - 1])
      throw ArpaParseError(i < lines.size() ? lines[i].first : last_line(),
                           "section " + header + ": declared " + std::to_string(declared[k - 1]) +
                               " entries, found " + std::to_string(sections[k - 1].size()));
  }
  if (i >= lines.size() || lines[i].second != "\\end\\")
    throw ArpaParseError(i < lines.size() ? lines[i].first : last_line(), "expected \\end\\");

  std::vector<std::pair<std::string, std::uint64_t>> entries;
  for (const auto& r : sections[0]) entries.emplace_back(std::string(r.words[0]), 0);
  auto vocab = std::make_shared<Vocabulary>(Vocabulary::from_entries(entries, 0));
  KneserNeyModel model(vocab, order);
  std::array<std::uint32_t, kMaxNgramOrder> ids{};
  for (std::size_t k = 1; k <= order; ++k) {
    auto& table = model.mutable_table(k);
    for (const auto& r : sections[k - 1]) {
      for (std::size_t w = 0; w < k; ++w) {
        auto id = vocab->find(r.words[w]);
        if (!id) throw NgramError("ARPA " + std::to_string(k) + "-gram uses word '" + std::string(r.words[w]) +
                                  "' missing from the unigram section");
        ids[w] = *id;
      }
      KneserNeyModel::Entry e;
      e.log_prob = r.log_prob <= kArpaZero ? -std::numeric_limits<double>::infinity() : r.log_prob * kLn10;
      if (r.bow) {
        e.has_bow = true;
        e.log_bow = *r.bow <= kArpaZero ? -std::numeric_limits<double>::infinity() : *r.bow * kLn10;
      }
      table[PackedGram::pack(std::span<const std::uint32_t>(ids.data(), k))] = e;
    }
  }
  return model;
}

}  // namespace senti
