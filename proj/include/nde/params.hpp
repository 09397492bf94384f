#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "nde/error.hpp"
#include "nde/io.hpp"
#include "nde/tensor.hpp"

namespace nde {

/// Ordered collection of named learnable tensors, each paired with a
/// gradient accumulator of the same shape.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  std::size_t add(std::string name, Tensor value) {
    if (index_.contains(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
    Tensor grad(value.shape());
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value), std::move(grad)});
    return entries_.size() - 1;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
    return it->second;
  }

  Entry& at(std::size_t i) { return entries_.at(i); }
  const Entry& at(std::size_t i) const { return entries_.at(i); }
  Entry& operator[](const std::string& name) { return entries_[index(name)]; }
  const Entry& operator[](const std::string& name) const { return entries_[index(name)]; }

  Tensor& value(const std::string& name) { return entries_[index(name)].value; }
  const Tensor& value(const std::string& name) const { return entries_[index(name)].value; }
  const Tensor& grad(const std::string& name) const { return entries_[index(name)].grad; }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

  std::vector<double> flat_values() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& e : entries_) out.insert(out.end(), e.value.values().begin(), e.value.values().end());
    return out;
  }

  std::vector<double> flat_grads() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& e : entries_) out.insert(out.end(), e.grad.values().begin(), e.grad.values().end());
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw InvalidArgument("flat parameter vector has wrong length");
    std::size_t off = 0;
    for (auto& e : entries_) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), e.value.size(), e.value.values().begin());
      off += e.value.size();
    }
  }

  /// Copy values (not gradients) from a store with identical names and shapes.
  void assign(const ParameterStore& other) {
    if (other.size() != size()) throw InvalidArgument("parameter stores differ in entry count");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name || entries_[i].value.shape() != other.entries_[i].value.shape())
        throw InvalidArgument("parameter '" + entries_[i].name + "' does not match '" + other.entries_[i].name + "'");
      entries_[i].value = other.entries_[i].value;
    }
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform fan-based initialization, bound sqrt(6 / (fan_in + fan_out)).
inline Tensor fan_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t({fan_in, fan_out});
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Checkpoint: <prefix>.json manifest {name -> shape} plus <prefix>.bin holding the
// concatenated little-endian float64 values in manifest order.

inline void save_checkpoint(const ParameterStore& store, const std::filesystem::path& prefix) {
  io::Json params = io::Json::object();
  std::vector<std::vector<double>> blobs;
  for (const auto& e : store) {
    params[e.name] = e.value.shape();
    blobs.emplace_back(e.value.values().begin(), e.value.values().end());
  }
  std::vector<const std::vector<double>*> chunks;
  for (const auto& b : blobs) chunks.push_back(&b);
  const std::string blob = io::encode_f64(chunks);

  auto bin_path = prefix;
  bin_path += ".bin";
  auto json_path = prefix;
  json_path += ".json";
  io::Json manifest;
  manifest["format"] = "nde-checkpoint-v1";
  manifest["blob"] = bin_path.filename().string();
  manifest["blob_fnv1a"] = io::hex64(io::fnv1a(blob));
  manifest["parameters"] = params;
  io::write_file(bin_path, blob);
  io::write_json(json_path, manifest);
}

inline ParameterStore load_checkpoint(const std::filesystem::path& prefix) {
  auto json_path = prefix;
  json_path += ".json";
  if (!std::filesystem::exists(json_path)) throw InvalidArgument("checkpoint not found: " + json_path.string());
  const auto manifest = io::read_json(json_path);
  if (manifest.value("format", "") != "nde-checkpoint-v1")
    throw InvalidArgument(json_path.string() + ": not an nde checkpoint manifest");
  const auto bin_path = json_path.parent_path() / manifest.at("blob").get<std::string>();
  const auto values = io::decode_f64(io::read_file(bin_path));

  ParameterStore store;
  std::size_t off = 0;
  for (const auto& [name, shape_json] : manifest.at("parameters").items()) {
    Shape shape = shape_json.get<Shape>();
    const std::size_t n = shape_size(shape);
    if (off + n > values.size()) throw InvalidArgument("checkpoint blob shorter than its manifest");
    store.add(name, Tensor(shape, std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(off),
                                                      values.begin() + static_cast<std::ptrdiff_t>(off + n))));
    off += n;
  }
  if (off != values.size()) throw InvalidArgument("checkpoint blob longer than its manifest");
  return store;
}

/// Every name or shape difference between a model's parameters and a loaded
/// checkpoint, one per line; empty when they fit.
inline std::string checkpoint_diff(const ParameterStore& model, const ParameterStore& loaded) {
  std::string out;
  for (const auto& e : model) {
    if (!loaded.contains(e.name)) {
      out += "  missing " + e.name + " " + shape_string(e.value.shape()) + "\n";
    } else if (const auto& got = loaded.value(e.name).shape(); got != e.value.shape()) {
      out += "  " + e.name + ": model " + shape_string(e.value.shape()) + ", checkpoint " + shape_string(got) + "\n";
    }
  }
  for (const auto& e : loaded)
    if (!model.contains(e.name)) out += "  unexpected " + e.name + " " + shape_string(e.value.shape()) + "\n";
  return out;
}

}  // namespace nde
