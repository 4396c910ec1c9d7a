#include <fstream>
#include <sstream>

#include "iurkit/error.hpp"
#include "iurkit/querygen.hpp"

namespace iurkit {

namespace {

std::vector<std::string> split_columns(const std::string& line) {
  std::vector<std::string> cols;
  if (line.find('\t') != std::string::npos) {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
  } else {
    std::stringstream ss(line);
    std::string col;
    while (ss >> col) cols.push_back(col);
  }
  return cols;
}

std::size_t parse_index(const std::string& s, std::size_t line_no, const char* field) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty())
    throw Error("CoNLL-U line " + std::to_string(line_no) + ": bad " + field + " '" + s + "'");
  return v;
}

}  // namespace

std::vector<ConlluSentence> read_conllu(std::istream& in) {
  std::vector<ConlluSentence> out;
  ConlluSentence cur;
  bool open = false;
  auto close = [&] {
    if (open) {
      cur.parse.validate();
      out.push_back(std::move(cur));
    }
    cur = {};
    open = false;
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      close();
      continue;
    }
    if (line[0] == '#') {
      static const std::string kKey = "sent_id";
      auto body = line.substr(1);
      auto eq = body.find('=');
      if (eq != std::string::npos) {
        auto key = body.substr(0, eq);
        key.erase(0, key.find_first_not_of(' '));
        key.erase(key.find_last_not_of(' ') + 1);
        if (key == kKey) {
          auto val = body.substr(eq + 1);
          val.erase(0, val.find_first_not_of(' '));
          val.erase(val.find_last_not_of(' ') + 1);
          cur.sent_id = val;
          open = true;
        }
      }
      continue;
    }
    const auto cols = split_columns(line);
    std::size_t head_col = 0;
    std::size_t rel_col = 0;
    if (cols.size() >= 10) {
      head_col = 6;
      rel_col = 7;
    } else if (cols.size() == 4) {
      head_col = 2;
      rel_col = 3;
    } else {
      throw Error("CoNLL-U line " + std::to_string(line_no) + ": expected 10 columns or ID FORM HEAD DEPREL");
    }
    if (cols[0].find_first_of("-.") != std::string::npos) continue;  // multiword range / empty node
    const auto id = parse_index(cols[0], line_no, "ID");
    if (id != cur.parse.arcs.size() + 1)
      throw Error("CoNLL-U line " + std::to_string(line_no) + ": token IDs must be consecutive from 1");
    cur.parse.forms.push_back(cols[1]);
    cur.parse.arcs.push_back({parse_index(cols[head_col], line_no, "HEAD"), cols[rel_col]});
    open = true;
  }
  close();
  return out;
}

std::vector<ConlluSentence> load_conllu(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CoNLL-U file: " + path.string());
  return read_conllu(in);
}

}  // namespace iurkit
