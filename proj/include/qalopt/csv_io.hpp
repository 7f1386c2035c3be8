#pragma once

// Long-format panel CSV and the per-subject scalar CSV.
//
// panel rows:    subject_id, j, landmark_time, z1..zd, a, y, q
// subjects rows: subject_id, event_time, censor_time, event_observed
//
// Rows exist for every landmark j = 0..K; after a subject exits (y = 0)
// the covariate, treatment and quality cells are empty.

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qalopt/common.hpp"
#include "qalopt/estimators.hpp"
#include "qalopt/panel.hpp"

namespace qalopt {

class CsvError : public std::runtime_error {
 public:
  explicit CsvError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  cells.push_back(cell);
  return cells;
}

inline double parse_time(const std::string& s, const std::string& what) {
  if (s.empty() || s == "inf" || s == "+inf" || s == "Inf") return kInf;
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw CsvError("unparseable " + what + ": '" + s + "'");
  }
}

}  // namespace detail

inline std::string panel_csv_header(const Panel& panel) {
  std::string h = "subject_id,j,landmark_time";
  for (const auto& name : panel.covariate_names) h += "," + name;
  h += ",a,y,q\n";
  return h;
}

inline void write_panel_csv(const Panel& panel, std::ostream& panel_out,
                            std::ostream& subjects_out) {
  const Landmarks& lm = panel.landmarks;
  panel_out << panel_csv_header(panel);
  const std::size_t d = panel.covariate_names.size();
  for (const auto& s : panel.subjects) {
    if (s.id.find(',') != std::string::npos)
      throw CsvError("subject id contains a comma: " + s.id);
    for (int j = 0; j <= lm.K; ++j) {
      panel_out << s.id << "," << j << "," << format_double(lm.times[j]);
      if (j < s.num_at_risk()) {
        if (s.z[j].size() != d)
          throw CsvError("covariate dimension mismatch for subject " + s.id);
        for (double v : s.z[j]) panel_out << "," << format_double(v);
        panel_out << "," << s.a[j] << ",1," << format_double(s.q[j]);
      } else {
        for (std::size_t k = 0; k < d; ++k) panel_out << ",";
        panel_out << ",,0,";
      }
      panel_out << "\n";
    }
  }
  subjects_out << "subject_id,event_time,censor_time,event_observed\n";
  for (const auto& s : panel.subjects) {
    subjects_out << s.id << ",";
    subjects_out << (std::isinf(s.event_time) ? "inf"
                                              : format_double(s.event_time));
    subjects_out << ",";
    subjects_out << (std::isinf(s.censor_time) ? "inf"
                                               : format_double(s.censor_time));
    subjects_out << "," << (s.event_observed ? 1 : 0) << "\n";
  }
}

inline void write_panel_csv(const Panel& panel, const std::string& panel_path,
                            const std::string& subjects_path) {
  std::ofstream pf(panel_path), sf(subjects_path);
  if (!pf) throw CsvError("cannot write " + panel_path);
  if (!sf) throw CsvError("cannot write " + subjects_path);
  write_panel_csv(panel, pf, sf);
}

// The landmark grid is read back from the (j, landmark_time) columns;
// tau is the largest of l_K and the finite exit times, since the study
// end is not stored in the schema.
inline Panel read_panel_csv(std::istream& panel_in, std::istream& subjects_in) {
  Panel panel;
  std::string line;
  if (!std::getline(panel_in, line)) throw CsvError("empty panel CSV");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 6 || header[0] != "subject_id" || header[1] != "j" ||
      header[2] != "landmark_time")
    throw CsvError("panel CSV header must start subject_id,j,landmark_time");
  const std::size_t d = header.size() - 6;
  for (std::size_t k = 0; k < d; ++k)
    panel.covariate_names.push_back(header[3 + k]);
  if (header[3 + d] != "a" || header[4 + d] != "y" || header[5 + d] != "q")
    throw CsvError("panel CSV header must end with a,y,q");

  std::map<int, double> times;
  std::map<std::string, std::size_t> index;
  int lineno = 1;
  while (std::getline(panel_in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw CsvError("line " + std::to_string(lineno) + ": expected " +
                     std::to_string(header.size()) + " cells");
    const std::string& id = cells[0];
    int j;
    double lt;
    try {
      j = std::stoi(cells[1]);
      lt = std::stod(cells[2]);
    } catch (const std::exception&) {
      throw CsvError("line " + std::to_string(lineno) + ": bad j or landmark_time");
    }
    if (j < 0) throw CsvError("line " + std::to_string(lineno) + ": j < 0");
    auto [it, fresh] = times.emplace(j, lt);
    if (!fresh && it->second != lt)
      throw CsvError("line " + std::to_string(lineno) +
                     ": landmark_time disagrees with earlier rows for j=" +
                     std::to_string(j));

    auto [sit, new_subject] = index.emplace(id, panel.subjects.size());
    if (new_subject) {
      panel.subjects.emplace_back();
      panel.subjects.back().id = id;
    }
    SubjectTrajectory& s = panel.subjects[sit->second];

    const std::string& y = cells[4 + d];
    if (y == "0") continue;  // exited; cells must stay empty but are ignored
    if (y != "1")
      throw CsvError("line " + std::to_string(lineno) + ": y must be 0 or 1");
    if (static_cast<int>(s.a.size()) != j)
      throw CsvError("line " + std::to_string(lineno) + ": subject " + id +
                     " has non-contiguous at-risk rows");
    std::vector<double> z(d);
    try {
      for (std::size_t k = 0; k < d; ++k) z[k] = std::stod(cells[3 + k]);
      s.a.push_back(std::stoi(cells[3 + d]));
      s.q.push_back(std::stod(cells[5 + d]));
    } catch (const std::exception&) {
      throw CsvError("line " + std::to_string(lineno) +
                     ": at-risk row with unparseable z/a/q cell");
    }
    s.z.push_back(std::move(z));
  }
  if (times.empty()) throw CsvError("panel CSV has no data rows");

  Landmarks lm;
  lm.K = times.rbegin()->first;
  lm.times.resize(lm.K + 1);
  for (int j = 0; j <= lm.K; ++j) {
    auto it = times.find(j);
    if (it == times.end())
      throw CsvError("no rows for landmark j=" + std::to_string(j));
    lm.times[j] = it->second;
  }
  if (lm.K >= 1) lm.gap = lm.times[1] - lm.times[0];
  lm.tau = lm.times[lm.K];

  std::string sline;
  if (!std::getline(subjects_in, sline)) throw CsvError("empty subjects CSV");
  if (detail::split_csv_line(sline) !=
      std::vector<std::string>{"subject_id", "event_time", "censor_time",
                               "event_observed"})
    throw CsvError("subjects CSV header mismatch");
  std::size_t seen = 0;
  lineno = 1;
  while (std::getline(subjects_in, sline)) {
    ++lineno;
    if (sline.empty()) continue;
    const auto cells = detail::split_csv_line(sline);
    if (cells.size() != 4)
      throw CsvError("subjects line " + std::to_string(lineno) +
                     ": expected 4 cells");
    auto it = index.find(cells[0]);
    if (it == index.end())
      throw CsvError("subjects CSV references unknown subject " + cells[0]);
    SubjectTrajectory& s = panel.subjects[it->second];
    s.event_time = detail::parse_time(cells[1], "event_time");
    s.censor_time = detail::parse_time(cells[2], "censor_time");
    if (cells[3] != "0" && cells[3] != "1")
      throw CsvError("subjects line " + std::to_string(lineno) +
                     ": event_observed must be 0 or 1");
    s.event_observed = cells[3] == "1";
    const double to = s.observed_time();
    if (std::isfinite(to)) lm.tau = std::max(lm.tau, to);
    ++seen;
  }
  if (seen != panel.subjects.size())
    throw CsvError("subjects CSV covers " + std::to_string(seen) + " of " +
                   std::to_string(panel.subjects.size()) + " subjects");
  panel.landmarks = lm;
  panel.landmarks.check();
  return panel;
}

inline Panel read_panel_csv(const std::string& panel_path,
                            const std::string& subjects_path) {
  std::ifstream pf(panel_path), sf(subjects_path);
  if (!pf) throw CsvError("cannot read " + panel_path);
  if (!sf) throw CsvError("cannot read " + subjects_path);
  return read_panel_csv(pf, sf);
}

inline std::string curve_csv(const SurvCurve& curve) {
  std::string out = "x,S,effective_n\n";
  for (std::size_t i = 0; i < curve.grid.size(); ++i)
    out += format_double(curve.grid[i]) + "," + format_double(curve.S[i]) +
           "," + format_double(curve.effective_n[i]) + "\n";
  return out;
}

}  // namespace qalopt
