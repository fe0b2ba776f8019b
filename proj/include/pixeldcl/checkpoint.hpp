#pragma once

#include <filesystem>
#include <map>
#include <sstream>

#include "pixeldcl/tensor.hpp"

namespace pixeldcl {

// A checkpoint is a directory holding manifest.txt plus one PDCT file per tensor.
// Manifest lines are either `key=value`, `layer <name> <fields...>` or
// `tensor <name> <file>`. Blank lines and lines starting with '#' are ignored.
class CheckpointWriter {
 public:
  explicit CheckpointWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    manifest_ = "# pixeldcl checkpoint v1\n";
  }

  void set(const std::string& key, const std::string& value) {
    manifest_ += key + "=" + value + "\n";
  }

  void line(const std::string& text) { manifest_ += text + "\n"; }

  void tensor(const std::string& name, const Tensor& t) {
    const std::string file = name + ".pdct";
    save_tensor(t, (dir_ / file).string());
    manifest_ += "tensor " + name + " " + file + "\n";
  }

  void finish() { detail::write_file((dir_ / "manifest.txt").string(), manifest_); }

 private:
  std::filesystem::path dir_;
  std::string manifest_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(std::filesystem::path dir) : dir_(std::move(dir)) {
    const auto path = dir_ / "manifest.txt";
    if (!std::filesystem::exists(path)) {
      throw format_error("checkpoint manifest not found: " + path.string());
    }
    std::istringstream in(detail::read_file(path.string()));
    std::string text;
    while (std::getline(in, text)) {
      if (text.empty() || text.front() == '#') continue;
      std::istringstream fields(text);
      std::string head;
      fields >> head;
      if (head == "tensor") {
        std::string name, file;
        if (!(fields >> name >> file)) throw format_error("bad tensor line: " + text);
        files_[name] = file;
      } else if (head == "layer") {
        std::vector<std::string> parts;
        for (std::string f; fields >> f;) parts.push_back(f);
        if (parts.empty()) throw format_error("bad layer line: " + text);
        layers_.push_back(std::move(parts));
      } else if (auto eq = text.find('='); eq != std::string::npos) {
        values_[text.substr(0, eq)] = text.substr(eq + 1);
      } else {
        throw format_error("unrecognised manifest line: " + text);
      }
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw format_error("checkpoint missing key " + key);
    return it->second;
  }

  Tensor tensor(const std::string& name) const {
    auto it = files_.find(name);
    if (it == files_.end()) throw format_error("checkpoint missing tensor " + name);
    return load_tensor((dir_ / it->second).string());
  }

  bool has_tensor(const std::string& name) const { return files_.count(name) != 0; }

  // Fields after `layer` for every layer line, in file order.
  const std::vector<std::vector<std::string>>& layers() const { return layers_; }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> files_;
  std::vector<std::vector<std::string>> layers_;
};

}  // namespace pixeldcl
