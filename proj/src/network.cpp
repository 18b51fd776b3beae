#include "calico/network.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace calico {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Arch mlp_arch(int input_dim, std::vector<int> hidden, int num_classes, Activation act) {
  Arch a;
  a.kind = ArchKind::mlp;
  a.input_dim = input_dim;
  a.hidden = std::move(hidden);
  a.num_classes = num_classes;
  a.activation = act;
  return a;
}

Arch cnn_arch(int channels, int height, int width, int num_classes, std::vector<int> conv_channels) {
  Arch a;
  a.kind = ArchKind::cnn;
  a.channels = channels;
  a.height = height;
  a.width = width;
  a.num_classes = num_classes;
  a.conv_channels = std::move(conv_channels);
  a.hidden.clear();
  return a;
}

std::string to_string(ArchKind k) { return k == ArchKind::mlp ? "mlp" : "cnn"; }
std::string to_string(Activation a) { return a == Activation::swish ? "swish" : "identity"; }

std::vector<Layer> build_layers(const Arch& arch) {
  require(arch.num_classes >= 1, "architecture needs at least one output");
  std::vector<Layer> layers;
  Index offset = 0;
  auto push = [&](Layer l) {
    l.offset = offset;
    offset += l.num_params();
    layers.push_back(l);
  };
  auto activation = [&](Index width) {
    if (arch.activation == Activation::swish) push({Layer::Kind::swish, width, width});
  };

  if (arch.kind == ArchKind::mlp) {
    require(arch.input_dim >= 1, "mlp input_dim must be positive");
    Index prev = arch.input_dim;
    for (int h : arch.hidden) {
      require(h >= 1, "mlp hidden width must be positive");
      push({Layer::Kind::dense, prev, h});
      activation(h);
      prev = h;
    }
    push({Layer::Kind::dense, prev, arch.num_classes});
    return layers;
  }

  require(arch.channels >= 1 && arch.height >= 1 && arch.width >= 1, "cnn image shape must be positive");
  require(!arch.conv_channels.empty(), "cnn needs at least one conv block");
  int c = arch.channels, h = arch.height, w = arch.width;
  for (std::size_t b = 0; b < arch.conv_channels.size(); ++b) {
    Layer conv{Layer::Kind::conv};
    conv.cin = c;
    conv.cout = arch.conv_channels[b];
    conv.h = h;
    conv.w = w;
    conv.stride = b == 0 ? 1 : 2;  // later blocks downsample
    conv.hout = (h - 1) / conv.stride + 1;
    conv.wout = (w - 1) / conv.stride + 1;
    conv.in = Index(c) * h * w;
    conv.out = Index(conv.cout) * conv.hout * conv.wout;
    push(conv);
    activation(conv.out);
    c = conv.cout;
    h = conv.hout;
    w = conv.wout;
  }
  Layer pool{Layer::Kind::pool, Index(c) * h * w, c};
  pool.cin = c;
  pool.h = h;
  pool.w = w;
  push(pool);
  push({Layer::Kind::dense, c, arch.num_classes});
  return layers;
}

void write_arch(std::ostream& os, const Arch& arch) {
  os << "arch " << to_string(arch.kind) << "\n";
  os << "classes " << arch.num_classes << "\n";
  os << "activation " << to_string(arch.activation) << "\n";
  if (arch.kind == ArchKind::mlp) {
    os << "input_dim " << arch.input_dim << "\n";
    os << "hidden";
    for (int h : arch.hidden) os << ' ' << h;
    os << "\n";
  } else {
    os << "image " << arch.channels << ' ' << arch.height << ' ' << arch.width << "\n";
    os << "conv";
    for (int c : arch.conv_channels) os << ' ' << c;
    os << "\n";
  }
}

namespace {

std::vector<int> read_ints(std::istringstream& ss) {
  std::vector<int> v;
  int x;
  while (ss >> x) v.push_back(x);
  return v;
}

// Parses one "key values..." line of an arch block. Returns false on unknown keys.
bool apply_arch_line(Arch& a, const std::string& line) {
  std::istringstream ss(line);
  std::string key;
  ss >> key;
  if (key == "arch") {
    std::string kind;
    ss >> kind;
    if (kind == "mlp") a.kind = ArchKind::mlp;
    else if (kind == "cnn") a.kind = ArchKind::cnn;
    else throw FormatError("arch: unknown kind '" + kind + "'");
  } else if (key == "classes") {
    if (!(ss >> a.num_classes)) throw FormatError("arch: bad 'classes'");
  } else if (key == "activation") {
    std::string act;
    ss >> act;
    if (act == "swish") a.activation = Activation::swish;
    else if (act == "identity") a.activation = Activation::identity;
    else throw FormatError("arch: unknown activation '" + act + "'");
  } else if (key == "input_dim") {
    if (!(ss >> a.input_dim)) throw FormatError("arch: bad 'input_dim'");
  } else if (key == "hidden") {
    a.hidden = read_ints(ss);
  } else if (key == "image") {
    if (!(ss >> a.channels >> a.height >> a.width)) throw FormatError("arch: bad 'image'");
  } else if (key == "conv") {
    a.conv_channels = read_ints(ss);
  } else {
    return false;
  }
  return true;
}

}  // namespace

Arch read_arch(std::istream& is) {
  Arch a;
  a.hidden.clear();
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (!apply_arch_line(a, line)) throw FormatError("arch: unknown field '" + line + "'");
  }
  if (a.kind == ArchKind::cnn) a.hidden.clear();
  return a;
}

void save_model(const ModelState<double>& state, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os << "calico-model 1\n";
  write_arch(os, state.arch);
  os << "seed " << state.seed << "\n";
  os << "params " << state.params.size() << "\n";
  os.write(reinterpret_cast<const char*>(state.params.data()),
           static_cast<std::streamsize>(state.params.size() * sizeof(double)));
  if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

ModelState<double> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  std::string line;
  std::getline(is, line);
  if (line != "calico-model 1") throw FormatError("checkpoint: bad version line '" + line + "'");
  ModelState<double> state;
  state.arch.hidden.clear();
  Index count = -1;
  while (std::getline(is, line)) {
    if (line.rfind("seed ", 0) == 0) {
      state.seed = std::stoull(line.substr(5));
    } else if (line.rfind("params ", 0) == 0) {
      count = std::stoll(line.substr(7));
      break;
    } else if (!apply_arch_line(state.arch, line)) {
      throw FormatError("checkpoint: unknown field '" + line + "'");
    }
  }
  if (count < 0) throw FormatError("checkpoint: missing 'params'");
  const Network<double> net(state.arch);
  if (count != net.num_params()) throw FormatError("checkpoint: 'params' count does not match arch");
  state.params.resize(count);
  is.read(reinterpret_cast<char*>(state.params.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (is.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
    throw FormatError("checkpoint: truncated parameter block");
  return state;
}

}  // namespace calico
