#include "calico/experiment.hpp"
#include "calico/service.hpp"

#include "support.hpp"

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <fstream>
#include <thread>

using namespace calico;
using nlohmann::json;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

std::string b64(const std::string& s) {
  return base64_encode({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

std::vector<QueryItem> items_for(std::initializer_list<Index> ids) {
  std::vector<QueryItem> out;
  for (Index id : ids) out.push_back({id, 0.5, 0});
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE_MESSAGE(is, p.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Runs a LabelService on a free port for the lifetime of the object.
struct LiveService {
  LabelService service;
  int port;
  std::thread thread;
  LiveService(LabelQueue& q, const Dataset& d) : service(q, d), port(service.bind("127.0.0.1", 0)) {
    thread = std::thread([this] { service.run(); });
  }
  ~LiveService() {
    service.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

json get_json(httplib::Client& c, const char* path) {
  auto res = c.Get(path);
  REQUIRE(res);
  REQUIRE(res->status == 200);
  return json::parse(res->body);
}

std::pair<int, json> post_label(httplib::Client& c, const std::string& body) {
  auto res = c.Post("/label", body, "application/json");
  REQUIRE(res);
  return {res->status, json::parse(res->body)};
}

std::pair<int, json> post_label(httplib::Client& c, Index id, int cls) {
  return post_label(c, json{{"id", id}, {"class", cls}}.dump());
}

// Decodes standard base64 with an alphabet lookup, for checking payloads.
std::vector<std::uint8_t> b64_decode(const std::string& s) {
  const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char ch : s) {
    if (ch == '=') break;
    acc = (acc << 6) | std::uint32_t(alphabet.find(ch));
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(std::uint8_t((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("base64 matches the standard test vectors") {
  CHECK(b64("") == "");
  CHECK(b64("f") == "Zg==");
  CHECK(b64("fo") == "Zm8=");
  CHECK(b64("foo") == "Zm9v");
  CHECK(b64("foob") == "Zm9vYg==");
  CHECK(b64("fooba") == "Zm9vYmE=");
  CHECK(b64("foobar") == "Zm9vYmFy");
  const std::vector<std::uint8_t> high{0xff, 0xfe, 0x00, 0x80};
  CHECK(base64_encode(high) == "//4AgA==");
}

TEST_CASE("bind addresses") {
  CHECK(parse_bind_address("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
  CHECK(parse_bind_address(":9000") == std::pair<std::string, int>{"0.0.0.0", 9000});
  CHECK(parse_bind_address("7000") == std::pair<std::string, int>{"127.0.0.1", 7000});
  CHECK(parse_bind_address("localhost:0").second == 0);
  CHECK_THROWS_AS(parse_bind_address("host:port"), ValidationError);
  CHECK_THROWS_AS(parse_bind_address("host:70000"), ValidationError);
  CHECK_THROWS_AS(parse_bind_address("host:80x"), ValidationError);
}

TEST_CASE("image bytes are row-major y, x, c pixels of a channel-major column") {
  Dataset d;
  d.num_classes = 2;
  d.image = {2, 2, 3};  // C, H, W
  d.features = MatrixXd(12, 1);
  // channel-major values chosen so each pixel maps to a distinct byte
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 3; ++x) d.features((c * 2 + y) * 3 + x, 0) = normalize_pixel(std::uint8_t(100 * c + 10 * y + x));
  d.labels = {0};
  const auto bytes = image_bytes(d, 0);
  REQUIRE(bytes.size() == 12);
  std::size_t i = 0;
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x)
      for (int c = 0; c < 2; ++c) CHECK(int(bytes[i++]) == 100 * c + 10 * y + x);
}

TEST_CASE("label queue: accepted, duplicate, conflict, unknown id, out of range") {
  LabelQueue q(3);
  q.publish(1, items_for({10, 11, 12}));
  CHECK(q.outstanding() == 3);
  CHECK(q.submit(10, 2) == SubmitResult::accepted);
  CHECK(q.submit(10, 2) == SubmitResult::duplicate);
  CHECK(q.submit(10, 1) == SubmitResult::conflict);
  CHECK(q.submit(99, 0) == SubmitResult::unknown_id);
  CHECK(q.submit(11, 3) == SubmitResult::out_of_range);
  CHECK(q.submit(11, -1) == SubmitResult::out_of_range);
  CHECK(q.outstanding() == 2);
  const auto got = q.take(0ms);
  CHECK(got == std::vector<Annotation>{{10, 2}});
  CHECK(q.take(0ms).empty());
  REQUIRE(q.pending().size() == 2);
  CHECK(q.pending()[0].id == 11);
}

TEST_CASE("label log survives a restart and re-delivers answered labels") {
  testing::TempDir dir;
  const fs::path wal = dir.path() / "labels.wal";
  {
    LabelQueue q(4, wal);
    q.publish(2, items_for({5, 6, 7}));
    CHECK(q.submit(6, 3) == SubmitResult::accepted);
    CHECK(q.submit(5, 0) == SubmitResult::accepted);
  }
  CHECK(slurp(wal) == "2 6 3\n2 5 0\n");
  LabelQueue q(4, wal);
  q.publish(2, items_for({5, 6, 7}));
  CHECK(q.outstanding() == 1);
  auto got = q.take(0ms);
  std::sort(got.begin(), got.end(), [](auto& a, auto& b) { return a.id < b.id; });
  CHECK(got == std::vector<Annotation>{{5, 0}, {6, 3}});
  CHECK(q.submit(6, 3) == SubmitResult::duplicate);
  CHECK(q.submit(6, 1) == SubmitResult::conflict);
  CHECK(q.submit(7, 1) == SubmitResult::accepted);
  CHECK(slurp(wal) == "2 6 3\n2 5 0\n2 7 1\n");
}

TEST_CASE("HTTP: queue, classes and status for a point dataset") {
  const Dataset d = make_synthetic(circle_spec(3, 10, 1.0, 0.3, 2));
  LabelQueue q(3);
  q.publish(4, {{3, 0.41, 2}, {17, 0.52, 0}});
  q.set_progress(4, 20, 10);
  LiveService live(q, d);
  auto c = live.client();

  const json queue = get_json(c, "/queue");
  CHECK(queue["round"] == 4);
  REQUIRE(queue["items"].size() == 2);
  const json& first = queue["items"][0];
  CHECK(first["id"] == 3);
  CHECK(first["confidence"].get<double>() == 0.41);
  CHECK(first["predicted"] == 3);  // 1-based on the wire
  CHECK(first["payload"]["kind"] == "point");
  CHECK(first["payload"]["coords"][0].get<double>() == d.features(0, 3));
  CHECK(first["payload"]["coords"][1].get<double>() == d.features(1, 3));

  const json classes = get_json(c, "/classes");
  REQUIRE(classes["classes"].size() == 3);
  CHECK(classes["classes"][0]["id"] == 1);
  CHECK(classes["classes"][2]["id"] == 3);

  const json status = get_json(c, "/status");
  CHECK(status["round"] == 4);
  CHECK(status["labeled"] == 20);
  CHECK(status["unlabeled"] == 10);
  CHECK(status["outstanding"] == 2);
  CHECK(status["finished"] == false);

  auto pre = c.Options("/label");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Origin") == "*");
}

TEST_CASE("HTTP: image payloads carry the pixels as base64") {
  Dataset d;
  d.num_classes = 2;
  d.image = {1, 4, 5};
  d.features = MatrixXd(20, 2);
  for (Index i = 0; i < 20; ++i) {
    d.features(i, 0) = normalize_pixel(std::uint8_t(i * 12));
    d.features(i, 1) = normalize_pixel(std::uint8_t(255 - i));
  }
  d.labels = {0, 1};
  LabelQueue q(2);
  q.publish(1, {{1, 0.6, 1}});
  LiveService live(q, d);
  auto c = live.client();
  const json item = get_json(c, "/queue")["items"][0];
  CHECK(item["payload"]["kind"] == "image");
  CHECK(item["payload"]["shape"] == json::array({4, 5, 1}));
  const auto px = b64_decode(item["payload"]["data"].get<std::string>());
  REQUIRE(px.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) CHECK(int(px[i]) == 255 - int(i));
}

TEST_CASE("HTTP: label submission status codes") {
  const Dataset d = make_synthetic(circle_spec(3, 10, 1.0, 0.3, 2));
  LabelQueue q(3);
  q.publish(1, items_for({1, 2, 3}));
  LiveService live(q, d);
  auto c = live.client();

  auto [s1, b1] = post_label(c, 2, 3);
  CHECK(s1 == 200);
  CHECK(b1["status"] == "accepted");
  CHECK(q.take(0ms) == std::vector<Annotation>{{2, 2}});  // 0-based inside

  auto [s2, b2] = post_label(c, 2, 3);
  CHECK(s2 == 200);
  CHECK(b2["status"] == "duplicate");
  CHECK(q.take(0ms).empty());

  auto [s3, b3] = post_label(c, 2, 1);
  CHECK(s3 == 409);
  CHECK(b3["error"] == "conflict");

  auto [s4, b4] = post_label(c, 40, 1);
  CHECK(s4 == 409);
  CHECK(b4["error"] == "unknown_id");

  for (int cls : {0, 4, -2}) {
    auto [s, b] = post_label(c, 1, cls);
    CHECK(s == 400);
    CHECK(b["error"] == "out_of_range");
  }
  CHECK(q.outstanding() == 2);

  for (const char* body : {"", "{", "[]", R"({"id": 1})", R"({"id": "1", "class": 1})", R"({"id": 1, "class": 1.5})"}) {
    auto [s, b] = post_label(c, body);
    CHECK_MESSAGE(s == 400, body);
    CHECK(b["error"] == "malformed");
  }
  CHECK(q.outstanding() == 2);
  CHECK(get_json(c, "/status")["outstanding"] == 2);
  CHECK(get_json(c, "/queue")["items"].size() == 2);
}

TEST_CASE("HTTP: a 250-item queue drains to zero outstanding") {
  const Dataset d = make_synthetic(circle_spec(5, 60, 1.0, 0.3, 8));
  LabelQueue q(5);
  std::vector<QueryItem> items;
  for (Index i = 0; i < 250; ++i) items.push_back({i + 10, 0.3, 0});
  q.publish(1, items);
  LiveService live(q, d);
  auto c = live.client();
  for (const auto& it : items) {
    auto [s, b] = post_label(c, it.id, d.labels[std::size_t(it.id)] + 1);
    REQUIRE(s == 200);
  }
  CHECK(get_json(c, "/status")["outstanding"] == 0);
  CHECK(get_json(c, "/queue")["items"].empty());
  CHECK(q.take(0ms).size() == 250);
}

TEST_CASE("serve: a remote run answered over HTTP matches the simulated run") {
  testing::TempDir dir;
  ExperimentConfig c = desk_protocol(Variant::calico);
  c.dataset = "synthetic:classes=3,per_class=40,radius=1,sigma=0.45";
  c.seeds = {2};
  c.num_rounds = 3;
  c.query.query_size = 6;
  c.train.epochs_per_round = 1;
  c.train.batch_all = 16;
  c.sgld.steps = 3;
  c.output = dir.path() / "sim";
  const auto sim = run_experiment(c);
  REQUIRE_FALSE(sim.seeds[0].failed);

  const fs::path run_dir = dir.path() / "remote";
  fs::create_directories(run_dir);
  std::ofstream(run_dir / "config.ini") << to_ini(c);
  const Dataset truth = build_dataset(c, 2);

  std::atomic<int> port{0};
  std::atomic<bool> done{false};
  std::thread annotator([&] {
    while (port == 0 && !done) std::this_thread::sleep_for(5ms);
    httplib::Client client("127.0.0.1", port);
    while (!done) {
      // The server shuts down as soon as the run ends.
      auto st = client.Get("/status");
      if (!st || json::parse(st->body)["finished"] == true) return;
      auto qr = client.Get("/queue");
      if (qr && qr->status == 200) {
        auto items = json::parse(qr->body)["items"];
        // answer in reverse order to show arrival order does not matter
        for (auto it = items.rbegin(); it != items.rend(); ++it) {
          const Index id = (*it)["id"].get<Index>();
          client.Post("/label", json{{"id", id}, {"class", truth.labels[std::size_t(id)] + 1}}.dump(),
                      "application/json");
        }
      }
      std::this_thread::sleep_for(10ms);
    }
  });

  ServeOptions opt;
  opt.run_dir = run_dir;
  opt.bind = "127.0.0.1:0";
  opt.on_ready = [&](int p) { port = p; };
  RunLog log;
  try {
    log = serve_oracle(opt);
  } catch (...) {
    done = true;
    annotator.join();
    throw;
  }
  done = true;
  annotator.join();

  CHECK_FALSE(log.failed);
  CHECK(log.rounds.size() == 3);
  for (const char* f : {"rounds.csv", "queries.csv", "final.model", "pools_final.txt"})
    CHECK_MESSAGE(slurp(run_dir / "seed_2" / f) == slurp(sim.seeds[0].dir / f), f);
  CHECK(fs::exists(run_dir / "seed_2" / "labels.wal"));
}
