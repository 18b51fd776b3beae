#pragma once

// HTTP front of a remote-oracle run, consumed by the annotation console.
//
//   GET  /queue    {"round", "items": [{"id", "confidence", "predicted", "payload"}]}
//                  payload: {"kind": "image", "shape": [H, W, C], "data": base64 of
//                  row-major 8-bit pixels} or {"kind": "point", "coords": [...]}
//   POST /label    {"id", "class"} with class in 1..K
//                  200 accepted | duplicate, 409 unknown_id | conflict,
//                  400 out_of_range | malformed
//   GET  /status   {"round", "labeled", "unlabeled", "outstanding", "finished", "failed", "message"}
//   GET  /classes  {"classes": [{"id", "name"}]}
//
// Classes are 1-based on the wire.

#include "calico/config.hpp"
#include "calico/data.hpp"
#include "calico/oracle.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <memory>
#include <span>
#include <string>

namespace calico {

std::string base64_encode(std::span<const std::uint8_t> bytes);

/// Row-major (y, x, c) 8-bit pixels of one channel-major feature column.
std::vector<std::uint8_t> image_bytes(const Dataset& dataset, Index id);

class LabelService {
 public:
  LabelService(LabelQueue& queue, const Dataset& dataset);
  ~LabelService();
  LabelService(const LabelService&) = delete;
  LabelService& operator=(const LabelService&) = delete;

  /// Binds host:port; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  void run();
  /// Blocks until run() is listening, then shuts it down.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// "host:port" or ":port" or "port".
std::pair<std::string, int> parse_bind_address(const std::string& address);

struct ServeOptions {
  std::filesystem::path run_dir;  // holds config.ini; the run goes to run_dir/seed_<s>
  std::string bind = "127.0.0.1:8080";
  std::optional<std::uint64_t> seed;  // default: the first configured seed
  bool linger = false;                // keep serving after the run ends
  std::function<void(int port)> on_ready;
};

/// Runs one seed of the configured variant against a remote oracle backed by
/// the HTTP service, resuming from the last checkpoint and the label log.
/// Returns the run log once the run ends (and, with linger, the server stops).
RunLog serve_oracle(const ServeOptions& options);

}  // namespace calico
