#include "calico/service.hpp"

#include "calico/experiment.hpp"

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <httplib.h>
#include <json.hpp>

#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace calico {

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  namespace it = boost::archive::iterators;
  using encoder = it::base64_from_binary<it::transform_width<const std::uint8_t*, 6, 8>>;
  std::string out(encoder(bytes.data()), encoder(bytes.data() + bytes.size()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

std::vector<std::uint8_t> image_bytes(const Dataset& ds, Index id) {
  require(ds.image.valid(), "image_bytes: dataset has no image shape");
  const auto& s = ds.image;
  std::vector<std::uint8_t> out(std::size_t(s.size()));
  const auto col = ds.features.col(id);
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x)
        out[std::size_t((Index(y) * s.width + x) * s.channels + c)] =
            to_pixel(col((Index(c) * s.height + y) * s.width + x));
  return out;
}

std::pair<std::string, int> parse_bind_address(const std::string& address) {
  const auto colon = address.rfind(':');
  std::string host = colon == std::string::npos ? "127.0.0.1" : address.substr(0, colon);
  if (host.empty()) host = "0.0.0.0";
  const std::string port = colon == std::string::npos ? address : address.substr(colon + 1);
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range(port);
    return {host, p};
  } catch (const std::logic_error&) {
    throw ValidationError("bind address '" + address + "' needs a port in 0..65535");
  }
}

struct LabelService::Impl {
  LabelQueue& queue;
  const Dataset& dataset;
  httplib::Server server;

  json payload(Index id) const {
    if (dataset.image.valid()) {
      const auto bytes = image_bytes(dataset, id);
      return {{"kind", "image"},
              {"shape", {dataset.image.height, dataset.image.width, dataset.image.channels}},
              {"data", base64_encode(bytes)}};
    }
    std::vector<double> coords(dataset.features.col(id).data(), dataset.features.col(id).data() + dataset.dim());
    return {{"kind", "point"}, {"coords", coords}};
  }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/queue", [this](const httplib::Request&, httplib::Response& res) {
      const auto st = queue.status();
      json items = json::array();
      for (const auto& q : queue.pending())
        items.push_back({{"id", q.id}, {"confidence", q.confidence}, {"predicted", q.predicted + 1},
                         {"payload", payload(q.id)}});
      reply(res, 200, {{"round", st.round}, {"items", items}});
    });

    server.Post("/label", [this](const httplib::Request& req, httplib::Response& res) {
      Index id = 0;
      int cls = 0;
      try {
        const json body = json::parse(req.body);
        if (!body.contains("id") || !body.contains("class") || !body["id"].is_number_integer() ||
            !body["class"].is_number_integer())
          throw std::invalid_argument("fields");
        id = body["id"].get<Index>();
        cls = body["class"].get<int>();
      } catch (const std::exception&) {
        reply(res, 400, {{"error", "malformed"}, {"detail", "expected {\"id\": int, \"class\": int}"}});
        return;
      }
      if (cls < 1 || cls > queue.num_classes()) {
        reply(res, 400, {{"error", "out_of_range"}, {"detail", "class must lie in 1.." + std::to_string(queue.num_classes())}});
        return;
      }
      switch (queue.submit(id, cls - 1)) {
        case SubmitResult::accepted: reply(res, 200, {{"status", "accepted"}, {"id", id}, {"class", cls}}); break;
        case SubmitResult::duplicate: reply(res, 200, {{"status", "duplicate"}, {"id", id}, {"class", cls}}); break;
        case SubmitResult::unknown_id: reply(res, 409, {{"error", "unknown_id"}, {"id", id}}); break;
        case SubmitResult::conflict: reply(res, 409, {{"error", "conflict"}, {"id", id}}); break;
        case SubmitResult::out_of_range: reply(res, 400, {{"error", "out_of_range"}, {"id", id}}); break;
      }
    });

    server.Get("/status", [this](const httplib::Request&, httplib::Response& res) {
      const auto st = queue.status();
      reply(res, 200,
            {{"round", st.round}, {"labeled", st.labeled}, {"unlabeled", st.unlabeled},
             {"outstanding", st.outstanding}, {"finished", st.finished}, {"failed", st.failed},
             {"message", st.message}});
    });

    server.Get("/classes", [this](const httplib::Request&, httplib::Response& res) {
      json classes = json::array();
      for (int k = 0; k < dataset.num_classes; ++k) {
        const std::string name = std::size_t(k) < dataset.class_names.size() ? dataset.class_names[std::size_t(k)]
                                                                             : "class" + std::to_string(k + 1);
        classes.push_back({{"id", k + 1}, {"name", name}});
      }
      reply(res, 200, {{"classes", classes}});
    });
  }
};

LabelService::LabelService(LabelQueue& queue, const Dataset& dataset) : impl_(new Impl{queue, dataset, {}}) {
  require(queue.num_classes() == dataset.num_classes, "label service: queue and dataset disagree on K");
  impl_->routes();
}

LabelService::~LabelService() = default;

int LabelService::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw std::runtime_error("label service: cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port))
    throw std::runtime_error("label service: cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void LabelService::run() { impl_->server.listen_after_bind(); }

void LabelService::stop() {
  // A stop issued before the listener is up would be lost.
  impl_->server.wait_until_ready();
  impl_->server.stop();
}

RunLog serve_oracle(const ServeOptions& options) {
  ExperimentConfig config = load_config(options.run_dir / "config.ini");
  require(config.variant != Variant::baseline, "serve: variant baseline has no oracle");
  config.oracle = OracleKind::remote;
  config.validate();
  const std::uint64_t seed = options.seed.value_or(config.seeds.front());
  const Dataset dataset = build_dataset(config, seed);
  const fs::path dir = options.run_dir / ("seed_" + std::to_string(seed));
  fs::create_directories(dir);

  LabelQueue queue(dataset.num_classes, dir / "labels.wal");
  RemoteOracle oracle(queue);
  LabelService service(queue, dataset);
  const auto [host, port] = parse_bind_address(options.bind);
  const int bound = service.bind(host, port);

  RunLog log;
  std::exception_ptr error;
  std::thread worker([&] {
    try {
      log = run_seed(config, seed, dataset, oracle, dir, true);
    } catch (...) {
      error = std::current_exception();
      queue.finish(true, "run aborted");
    }
    if (!options.linger) service.stop();
  });
  if (options.on_ready) options.on_ready(bound);
  service.run();
  worker.join();
  if (error) std::rethrow_exception(error);
  return log;
}

}  // namespace calico
