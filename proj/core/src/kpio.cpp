#include "takin/kpio.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace takin::kpio {

namespace {

std::string meta_line(const std::map<std::string, std::string>& meta, const std::string& kind) {
  std::ostringstream os;
  os << "#meta kind=" << kind;
  for (const auto& [key, value] : meta) os << ' ' << key << '=' << value;
  return os.str();
}

void write_lines(std::ofstream& out, const std::vector<Eigen::VectorXd>& frames) {
  for (const auto& frame : frames) {
    for (Eigen::Index i = 0; i < frame.size(); ++i) {
      if (i) out << ' ';
      out << format_value(frame[i]);
    }
    out << '\n';
  }
}

}  // namespace

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write(const std::string& path, int k, const std::string& kind,
           const std::vector<Eigen::VectorXd>& frames,
           const std::map<std::string, std::string>& meta) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::io, "cannot open " + path + " for writing");
  out << "#takin-kp v1 K=" << k << '\n';
  out << meta_line(meta, kind) << '\n';
  write_lines(out, frames);
  require(out.good(), ErrorKind::io, "write failed for " + path);
}

void write_features(const std::string& path, int layers, int dims,
                    const std::vector<Eigen::VectorXd>& frames,
                    const std::map<std::string, std::string>& meta) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::io, "cannot open " + path + " for writing");
  out << "#takin-af v1 L=" << layers << " D=" << dims << '\n';
  out << meta_line(meta, "features") << '\n';
  write_lines(out, frames);
  require(out.good(), ErrorKind::io, "write failed for " + path);
}

KpFile read(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path);

  KpFile file;
  std::string line;
  bool header_seen = false;
  Eigen::Index expected = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::string tag;
      is >> tag;
      if (tag == "takin-kp" || tag == "takin-af") {
        header_seen = true;
        std::string token;
        while (is >> token) {
          const auto eq = token.find('=');
          if (eq != std::string::npos)
            file.meta[token.substr(0, eq)] = token.substr(eq + 1);
        }
        if (auto it = file.meta.find("K"); it != file.meta.end()) file.k = std::stoi(it->second);
      } else if (tag == "meta") {
        std::string token;
        while (is >> token) {
          const auto eq = token.find('=');
          if (eq == std::string::npos) continue;
          const std::string key = token.substr(0, eq);
          const std::string value = token.substr(eq + 1);
          if (key == "kind")
            file.kind = value;
          else
            file.meta[key] = value;
        }
      }
      continue;
    }
    require(header_seen, ErrorKind::io, path + ": missing #takin header line");
    std::istringstream is(line);
    std::vector<double> values;
    double v;
    while (is >> v) values.push_back(v);
    require(!values.empty(), ErrorKind::io, path + ": empty frame line");
    Eigen::VectorXd frame = Eigen::Map<Eigen::VectorXd>(values.data(),
                                                        static_cast<Eigen::Index>(values.size()));
    if (expected < 0)
      expected = frame.size();
    else
      require(frame.size() == expected, ErrorKind::io,
              path + ": inconsistent frame width across lines");
    file.frames.push_back(std::move(frame));
  }
  require(header_seen, ErrorKind::io, path + ": missing #takin header line");
  return file;
}

}  // namespace takin::kpio
