#include "didsnmm/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "didsnmm/error.hpp"

namespace didsnmm {

bool is_baseline(const Action& a) {
  for (Eigen::Index c = 0; c < a.size(); ++c)
    if (a[c] != 0.0) return false;
  return true;
}

PanelDataset::PanelDataset(int n_subjects, int K, std::vector<std::string> treatment_names,
                           std::vector<std::string> covariate_names)
    : n_(n_subjects),
      K_(K),
      treatment_names_(std::move(treatment_names)),
      covariate_names_(std::move(covariate_names)) {
  if (n_subjects < 0 || K < 0) throw DataError("panel dimensions must be non-negative");
  if (treatment_names_.empty()) throw DataError("panel needs at least one treatment component");
  if (static_cast<int>(treatment_names_.size()) > 8)
    throw DataError("at most 8 treatment components are supported");
  Y_ = RowMatrix::Zero(n_, periods());
  A_ = RowMatrix::Zero(n_, q() * periods());
  Z_ = RowMatrix::Zero(n_, p() * periods());
  labels_.resize(periods());
  std::iota(labels_.begin(), labels_.end(), 0.0);
  ids_.resize(n_);
  source_.resize(n_);
  for (int i = 0; i < n_; ++i) {
    ids_[i] = std::to_string(i + 1);
    source_[i] = i;
  }
}

Action PanelDataset::action(int i, int m) const {
  Action a(q());
  for (int c = 0; c < q(); ++c) a[c] = this->a(i, c, m);
  return a;
}

int PanelDataset::treatment_index(const std::string& name) const {
  auto it = std::find(treatment_names_.begin(), treatment_names_.end(), name);
  return it == treatment_names_.end() ? -1 : static_cast<int>(it - treatment_names_.begin());
}

int PanelDataset::covariate_index(const std::string& name) const {
  auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
  return it == covariate_names_.end() ? -1 : static_cast<int>(it - covariate_names_.begin());
}

void PanelDataset::set_time_labels(std::vector<double> labels) {
  if (static_cast<int>(labels.size()) != periods())
    throw DataError("time label count does not match the number of periods");
  labels_ = std::move(labels);
}

PanelDataset PanelDataset::subset(const std::vector<int>& idx) const {
  PanelDataset out(static_cast<int>(idx.size()), K_, treatment_names_, covariate_names_);
  out.labels_ = labels_;
  for (int r = 0; r < out.n_; ++r) {
    const int i = idx[r];
    if (i < 0 || i >= n_) throw DataError("subset index out of range");
    out.Y_.row(r) = Y_.row(i);
    out.A_.row(r) = A_.row(i);
    if (p() > 0) out.Z_.row(r) = Z_.row(i);
    out.ids_[r] = ids_[i];
    out.source_[r] = source_[i];
  }
  return out;
}

double PanelDataset::max_abs_outcome() const {
  return Y_.size() == 0 ? 0.0 : Y_.cwiseAbs().maxCoeff();
}

std::optional<double> HistoryView::covariate(int c, int lag) const {
  if (lag < 0) throw ConfigError("covariate lag must be non-negative");
  const int t = m_ - lag;
  if (t < 0) return std::nullopt;
  return d_->z(i_, c, t);
}

std::optional<double> HistoryView::outcome_lag(int lag) const {
  if (lag < 1) throw ConfigError("Y_m is not part of the history at time m; outcome lag must be >= 1");
  const int t = m_ - lag;
  if (t < 0) return std::nullopt;
  return d_->y(i_, t);
}

std::optional<double> HistoryView::treatment_lag(int c, int lag) const {
  if (lag < 1) throw ConfigError("A_m is not part of the history at time m; treatment lag must be >= 1");
  const int t = m_ - lag;
  if (t < 0) return std::nullopt;
  return d_->a(i_, c, t);
}

double HistoryView::treatment_count(int c) const {
  double s = 0;
  for (int j = 0; j < m_; ++j) s += d_->a(i_, c, j);
  return s;
}

double HistoryView::treatment_time_sum(int c) const {
  double s = 0;
  for (int j = 0; j < m_; ++j) s += j * d_->a(i_, c, j);
  return s;
}

int InitiationTime::time() const {
  if (!time_) throw DataError("initiation time is NEVER");
  return *time_;
}

InitiationTime initiation_time(const PanelDataset& d, int i, const std::vector<int>& components) {
  for (int m = 0; m <= d.K(); ++m) {
    bool departed = false;
    if (components.empty()) {
      for (int c = 0; c < d.q(); ++c) departed = departed || d.a(i, c, m) != 0.0;
    } else {
      for (int c : components) departed = departed || d.a(i, c, m) != 0.0;
    }
    if (departed) return InitiationTime::at(m, d.action(i, m));
  }
  return InitiationTime::never();
}

bool is_staggered_adoption(const PanelDataset& d, const std::vector<int>& components) {
  std::vector<int> comps = components;
  if (comps.empty()) {
    comps.resize(d.q());
    std::iota(comps.begin(), comps.end(), 0);
  }
  for (int i = 0; i < d.n(); ++i) {
    const InitiationTime T = initiation_time(d, i, comps);
    if (T.is_never()) continue;
    for (int m = T.time() + 1; m <= d.K(); ++m)
      for (int c : comps)
        if (d.a(i, c, m) != d.a(i, c, T.time())) return false;
  }
  return true;
}

std::map<std::string, int> initiation_histogram(const PanelDataset& d, const std::vector<int>& components) {
  std::map<std::string, int> h;
  for (int i = 0; i < d.n(); ++i) {
    const InitiationTime T = initiation_time(d, i, components);
    h[T.is_never() ? std::string("never") : format_number(d.time_label(T.time()))]++;
  }
  return h;
}

std::string format_number(double v) {
  if (v == 0.0) return std::signbit(v) ? "-0" : "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::vector<std::string>> parse_records(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false, field_started = false;
  size_t i = 0;
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
      static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF)
    i = 3;
  auto end_row = [&] {
    row.push_back(field);
    field.clear();
    field_started = false;
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (ch == ',') {
      row.push_back(field);
      field.clear();
      field_started = false;
    } else if (ch == '\n') {
      end_row();
    } else if (ch == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') continue;
      end_row();
    } else {
      field += ch;
      field_started = true;
    }
  }
  if (in_quotes) throw DataError("unterminated quoted field in CSV");
  if (field_started || !row.empty()) end_row();
  return rows;
}

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
  return s.substr(b, e - b);
}

bool is_missing_token(const std::string& s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "NULL";
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (b != e && *b == '+') ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

bool all_integer_ids(const std::vector<std::string>& ids) {
  for (const auto& s : ids) {
    if (s.empty()) return false;
    size_t b = (s[0] == '-') ? 1 : 0;
    if (b == s.size() || s.size() - b > 18) return false;
    for (size_t k = b; k < s.size(); ++k)
      if (s[k] < '0' || s[k] > '9') return false;
  }
  return true;
}

}  // namespace

PanelDataset parse_csv(const std::string& text, const CsvSchema& schema) {
  const auto records = parse_records(text);
  if (records.empty()) throw DataError("CSV is empty; a header row is required");
  std::vector<std::string> header;
  for (const auto& h : records[0]) header.push_back(trim(h));
  auto col = [&](const std::string& name, const char* role) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw DataError(std::string("CSV has no column '") + name + "' for role " + role);
    return static_cast<int>(it - header.begin());
  };
  const int c_id = col(schema.subject_id, "subject_id");
  const int c_time = col(schema.time, "time");
  const int c_y = col(schema.outcome, "outcome");

  std::vector<std::pair<std::string, int>> tcols, zcols;
  for (const auto& [role, name] : schema.treatments) tcols.emplace_back(role, col(name, "treatment"));
  for (const auto& [role, name] : schema.covariates) zcols.emplace_back(role, col(name, "covariate"));
  if (schema.infer_prefixed) {
    for (size_t c = 0; c < header.size(); ++c) {
      const std::string& h = header[c];
      if (schema.treatments.empty() && h.size() > 2 && h.rfind("a_", 0) == 0)
        tcols.emplace_back(h.substr(2), static_cast<int>(c));
      if (schema.covariates.empty() && h.size() > 2 && h.rfind("z_", 0) == 0)
        zcols.emplace_back(h.substr(2), static_cast<int>(c));
    }
  }
  if (tcols.empty()) throw DataError("CSV has no treatment columns");

  struct Raw {
    std::string id;
    double time;
    size_t line;
    const std::vector<std::string>* fields;
  };
  std::vector<Raw> raws;
  raws.reserve(records.size() - 1);
  for (size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r];
    if (f.size() != header.size())
      throw DataError("CSV line " + std::to_string(r + 1) + " has " + std::to_string(f.size()) +
                      " fields, header has " + std::to_string(header.size()));
    const std::string id = trim(f[c_id]);
    if (id.empty()) throw DataError("missing subject_id on CSV line " + std::to_string(r + 1));
    const std::string ts = trim(f[c_time]);
    auto t = parse_double(ts);
    if (!t || std::floor(*t) != *t)
      throw DataError("time value '" + ts + "' on CSV line " + std::to_string(r + 1) +
                      " is not an integer");
    raws.push_back({id, *t, r + 1, &f});
  }
  if (raws.empty()) throw DataError("CSV has a header but no data rows");

  std::vector<double> times;
  for (const auto& r : raws) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (size_t k = 1; k < times.size(); ++k)
    if (times[k] != times[k - 1] + 1)
      throw DataError("time values must be consecutive integers; gap between " +
                      format_number(times[k - 1]) + " and " + format_number(times[k]));

  std::vector<std::string> ids;
  for (const auto& r : raws) ids.push_back(r.id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (all_integer_ids(ids))
    std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
      return std::stoll(a) < std::stoll(b);
    });
  std::unordered_map<std::string, int> id_index;
  for (size_t i = 0; i < ids.size(); ++i) id_index[ids[i]] = static_cast<int>(i);

  std::vector<std::string> tnames, znames;
  for (auto& t : tcols) tnames.push_back(t.first);
  for (auto& z : zcols) znames.push_back(z.first);
  const int K = static_cast<int>(times.size()) - 1;
  PanelDataset d(static_cast<int>(ids.size()), K, tnames, znames);
  d.set_time_labels(times);
  for (size_t i = 0; i < ids.size(); ++i) d.set_subject_id(static_cast<int>(i), ids[i]);

  std::vector<char> seen(ids.size() * times.size(), 0);
  for (const auto& r : raws) {
    const int i = id_index[r.id];
    const int m = static_cast<int>(r.time - times[0]);
    char& s = seen[static_cast<size_t>(i) * times.size() + m];
    if (s) throw DataError("duplicate row for subject " + r.id + " at time " + format_number(r.time));
    s = 1;
    auto value = [&](int c, const std::string& cname) {
      const std::string v = trim((*r.fields)[c]);
      if (is_missing_token(v))
        throw DataError("missing value in column '" + cname + "' for subject " + r.id + " at time " +
                        format_number(r.time));
      auto x = parse_double(v);
      if (!x)
        throw DataError("non-numeric value '" + v + "' in column '" + cname + "' for subject " + r.id +
                        " at time " + format_number(r.time));
      return *x;
    };
    d.set_y(i, m, value(c_y, header[c_y]));
    for (size_t c = 0; c < tcols.size(); ++c)
      d.set_a(i, static_cast<int>(c), m, value(tcols[c].second, header[tcols[c].second]));
    for (size_t c = 0; c < zcols.size(); ++c)
      d.set_z(i, static_cast<int>(c), m, value(zcols[c].second, header[zcols[c].second]));
  }
  for (size_t i = 0; i < ids.size(); ++i)
    for (size_t m = 0; m < times.size(); ++m)
      if (!seen[i * times.size() + m])
        throw DataError("ragged panel: subject " + ids[i] + " has no row at time " + format_number(times[m]));
  return d;
}

PanelDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema);
}

std::string to_csv(const PanelDataset& d) {
  std::string out = "subject_id,time,y";
  for (const auto& t : d.treatment_names()) out += ",a_" + t;
  for (const auto& z : d.covariate_names()) out += ",z_" + z;
  out += '\n';
  for (int i = 0; i < d.n(); ++i) {
    const std::string id = quote_field(d.subject_id(i));
    for (int m = 0; m <= d.K(); ++m) {
      out += id;
      out += ',';
      out += format_number(d.time_label(m));
      out += ',';
      out += format_number(d.y(i, m));
      for (int c = 0; c < d.q(); ++c) {
        out += ',';
        out += format_number(d.a(i, c, m));
      }
      for (int c = 0; c < d.p(); ++c) {
        out += ',';
        out += format_number(d.z(i, c, m));
      }
      out += '\n';
    }
  }
  return out;
}

void write_csv(const PanelDataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << to_csv(d);
}

}  // namespace didsnmm
