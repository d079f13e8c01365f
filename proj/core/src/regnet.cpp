#include "metareg/regnet.hpp"

#include <cmath>
#include <sstream>

#include "metareg/rng.hpp"

namespace metareg {

void ArchConfig::validate() const {
  if (grid.size() != 3) throw ConfigError("arch.grid must have 3 dimensions");
  if (levels < 1) throw ConfigError("arch.levels must be >= 1");
  if (base_channels < 1) throw ConfigError("arch.base_channels must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("arch.kernel_size must be odd and positive");
  if (head_kernel_size < 1 || head_kernel_size % 2 == 0) {
    throw ConfigError("arch.head_kernel_size must be odd and positive");
  }
  const std::int64_t div = std::int64_t{1} << (levels - 1);
  for (std::size_t i = 0; i < 3; ++i) {
    if (grid[i] < 1 || grid[i] % div != 0) {
      throw ConfigError("arch.grid axis " + std::to_string(i) + " (" + std::to_string(grid[i]) +
                        ") is not divisible by 2^(levels-1) = " + std::to_string(div));
    }
  }
}

std::string ArchConfig::descriptor() const {
  std::ostringstream os;
  os << "grid=" << grid[0] << 'x' << grid[1] << 'x' << grid[2] << ";levels=" << levels
     << ";base_channels=" << base_channels << ";kernel_size=" << kernel_size
     << ";head_kernel_size=" << head_kernel_size << ";leaky_slope=" << leaky_slope
     << ";zero_init_heads=" << (zero_init_heads ? 1 : 0);
  return os.str();
}

ArchConfig ArchConfig::from_descriptor(const std::string& text) {
  ArchConfig a;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw DataError("malformed architecture descriptor: '" + text + "'");
    const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
    try {
      if (key == "grid") {
        std::int64_t d, h, w;
        char x1, x2;
        std::istringstream gs(val);
        if (!(gs >> d >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x') throw DataError("bad grid");
        a.grid = {d, h, w};
      } else if (key == "levels") {
        a.levels = std::stoi(val);
      } else if (key == "base_channels") {
        a.base_channels = std::stoi(val);
      } else if (key == "kernel_size") {
        a.kernel_size = std::stoi(val);
      } else if (key == "head_kernel_size") {
        a.head_kernel_size = std::stoi(val);
      } else if (key == "leaky_slope") {
        a.leaky_slope = std::stod(val);
      } else if (key == "zero_init_heads") {
        a.zero_init_heads = val == "1";
      } else {
        throw DataError("unknown architecture key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw DataError("malformed architecture value for '" + key + "'");
    }
  }
  return a;
}

template <class T>
std::int64_t BasicNetworkParams<T>::count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.value.numel();
  return n;
}

template <class T>
const Tensor<T>& BasicNetworkParams<T>::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ContractError("no parameter named '" + name + "'");
}

template struct BasicNetworkParams<float>;
template struct BasicNetworkParams<double>;

namespace {

// Layer table shared by init_params and forward, in canonical order:
// enc0..enc{L-1}, dec{L-2}..dec0, head{L-1}..head0.
struct LayerSpec {
  std::string name;
  int in_ch, out_ch, ksize;
  bool head;
};

std::vector<LayerSpec> layer_table(const ArchConfig& a) {
  std::vector<LayerSpec> t;
  t.push_back({"enc0", 2, a.channels(0), a.kernel_size, false});
  for (int l = 1; l < a.levels; ++l) t.push_back({"enc" + std::to_string(l), a.channels(l - 1), a.channels(l), a.kernel_size, false});
  for (int l = a.levels - 2; l >= 0; --l) {
    t.push_back({"dec" + std::to_string(l), a.channels(l + 1), a.channels(l), a.kernel_size, false});
  }
  for (int l = a.levels - 1; l >= 0; --l) t.push_back({"head" + std::to_string(l), a.channels(l), 3, a.head_kernel_size, true});
  return t;
}

}  // namespace

NetworkParams init_params(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  NetworkParams p{arch, {}};
  for (const LayerSpec& l : layer_table(arch)) {
    const std::int64_t k = l.ksize;
    Tensor<float> kernel({l.out_ch, l.in_ch, k, k, k});
    Tensor<float> bias({l.out_ch});
    const bool zero = l.head && arch.zero_init_heads;
    if (!zero) {
      const double fan_in = static_cast<double>(l.in_ch * k * k * k);
      const double gain = l.head ? 1.0 : 2.0 / (1.0 + arch.leaky_slope * arch.leaky_slope);
      const double bound = std::sqrt(3.0 * gain / fan_in);
      for (float& w : kernel.data()) w = static_cast<float>(rng.uniform(-bound, bound));
    }
    p.tensors.push_back({l.name + ".kernel", std::move(kernel)});
    p.tensors.push_back({l.name + ".bias", std::move(bias)});
  }
  return p;
}

template <class T>
std::vector<Var<T>> bind_params(Tape<T>& tape, const BasicNetworkParams<T>& params, bool requires_grad) {
  std::vector<Var<T>> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(tape.leaf(t.value, requires_grad, t.name));
  return vars;
}

template <class T>
Var<T> forward(const ArchConfig& arch, std::span<const Var<T>> params, Var<T> source, Var<T> target) {
  const auto layers = layer_table(arch);
  if (params.size() != 2 * layers.size()) {
    throw ContractError("forward: expected " + std::to_string(2 * layers.size()) + " parameter tensors, got " +
                        std::to_string(params.size()));
  }
  const Shape grid_shape{1, arch.grid[0], arch.grid[1], arch.grid[2]};
  for (const Var<T>* v : {&source, &target}) {
    if (v->shape() != grid_shape) {
      const Shape& s = v->shape();
      for (std::size_t ax = 0; ax < std::min<std::size_t>(4, s.size()); ++ax) {
        if (s[ax] != grid_shape[ax]) {
          throw DimensionError("forward: input axis " + std::to_string(ax) + " is " + std::to_string(s[ax]) +
                               ", network expects " + std::to_string(grid_shape[ax]));
        }
      }
      throw DimensionError("forward: input must be " + shape_str(grid_shape) + ", got " + shape_str(s));
    }
  }
  std::size_t next = 0;
  auto conv = [&](Var<T> x, int stride) {
    Var<T> k = params[next], b = params[next + 1];
    next += 2;
    return conv3d(x, k, std::optional<Var<T>>(b), stride, Padding::kSame);
  };
  auto to_batch = [](Var<T> x) {
    Shape s = x.shape();
    s.insert(s.begin(), 1);
    return reshape(x, s);
  };
  auto from_batch = [](Var<T> x) {
    Shape s = x.shape();
    s.erase(s.begin());
    return reshape(x, s);
  };

  const Var<T> inputs[2] = {source, target};
  Var<T> x = to_batch(concat(std::span<const Var<T>>(inputs)));
  std::vector<Var<T>> skips;
  x = leaky_relu(conv(x, 1), arch.leaky_slope);
  skips.push_back(x);
  for (int l = 1; l < arch.levels; ++l) {
    x = leaky_relu(conv(x, 2), arch.leaky_slope);
    skips.push_back(x);
  }
  // Decoder features per level, coarse to fine.
  std::vector<Var<T>> features(static_cast<std::size_t>(arch.levels));
  features[static_cast<std::size_t>(arch.levels - 1)] = x;
  for (int l = arch.levels - 2; l >= 0; --l) {
    Var<T> y = leaky_relu(conv(x, 1), arch.leaky_slope);
    y = to_batch(resample_trilinear(from_batch(y), 2.0));
    x = add(y, skips[static_cast<std::size_t>(l)]);
    features[static_cast<std::size_t>(l)] = x;
  }
  std::optional<Var<T>> ddf;
  for (int l = arch.levels - 1; l >= 0; --l) {
    Var<T> head = from_batch(conv(features[static_cast<std::size_t>(l)], 1));
    if (l > 0) head = resample_trilinear(head, static_cast<double>(1 << l));
    ddf = ddf ? add(*ddf, head) : head;
  }
  return *ddf;
}

template std::vector<Var<float>> bind_params(Tape<float>&, const BasicNetworkParams<float>&, bool);
template std::vector<Var<double>> bind_params(Tape<double>&, const BasicNetworkParams<double>&, bool);
template Var<float> forward(const ArchConfig&, std::span<const Var<float>>, Var<float>, Var<float>);
template Var<double> forward(const ArchConfig&, std::span<const Var<double>>, Var<double>, Var<double>);

DisplacementField forward(const NetworkParams& params, const Volume& source, const Volume& target_masked) {
  if (source.grid() != params.arch.grid || target_masked.grid() != params.arch.grid) {
    throw DimensionError("forward: volume grid " + shape_str(source.grid()) + " / " +
                         shape_str(target_masked.grid()) + " does not match network grid " +
                         shape_str(params.arch.grid));
  }
  Tape<float> tape;
  const auto vars = bind_params(tape, params, false);
  Var<float> s = tape.constant(source.as_channels());
  Var<float> t = tape.constant(target_masked.as_channels());
  Var<float> u = forward<float>(params.arch, vars, s, t);
  return DisplacementField(u.value(), source.spacing);
}

}  // namespace metareg
