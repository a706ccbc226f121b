#include "cforge/checkpoint.hpp"

#include "cforge/error.hpp"
#include "cforge/io.hpp"

namespace cforge {

std::string serialize_models(const std::vector<NamedModel>& models) {
  std::string out;
  out += "format ";
  out += kModelFormat;
  out += "\nmodels " + std::to_string(models.size()) + "\n";
  for (const auto& [name, model] : models) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
      throw InvalidInput("model names must be single non-empty tokens");
    }
    out += "model " + name + "\n";
    out += "input_dim " + std::to_string(model.input_dim()) + " output_dim " +
           std::to_string(model.output_dim()) + " layers " + std::to_string(model.layers().size()) +
           "\n";
    for (std::size_t k = 0; k < model.layers().size(); ++k) {
      const auto& l = model.layers()[k];
      out += "layer " + std::to_string(k) + " in " + std::to_string(l.in_dim()) + " out " +
             std::to_string(l.out_dim()) + " activation " +
             std::string(activation_name(l.activation.kind)) + " slope " +
             format_double(l.activation.slope) + " dropout " + format_double(l.dropout_rate) + "\n";
      out += "weights\n";
      for (std::size_t r = 0; r < l.out_dim(); ++r) {
        const auto row = l.weights.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
          if (c) out += ' ';
          out += format_double(row[c]);
        }
        out += '\n';
      }
      out += "bias\n";
      for (std::size_t i = 0; i < l.bias.size(); ++i) {
        if (i) out += ' ';
        out += format_double(l.bias[i]);
      }
      out += "\n";
    }
    out += "end\n";
  }
  return out;
}

std::vector<NamedModel> parse_models(std::string_view text) {
  Tokenizer tok(text);
  tok.expect("format");
  const auto format = tok.next();
  if (format != kModelFormat) {
    throw IoError("unsupported checkpoint format '" + std::string(format) + "'");
  }
  tok.expect("models");
  const long long count = tok.next_int();
  if (count < 0) throw IoError("negative model count");
  std::vector<NamedModel> models;
  for (long long m = 0; m < count; ++m) {
    tok.expect("model");
    std::string name(tok.next());
    tok.expect("input_dim");
    const auto input_dim = tok.next_int();
    tok.expect("output_dim");
    const auto output_dim = tok.next_int();
    tok.expect("layers");
    const auto n_layers = tok.next_int();
    if (n_layers <= 0) throw IoError("model '" + name + "' has no layers");
    std::vector<DenseLayer> layers;
    for (long long k = 0; k < n_layers; ++k) {
      tok.expect("layer");
      if (tok.next_int() != k) throw IoError("layers out of order in model '" + name + "'");
      tok.expect("in");
      const auto in = tok.next_int();
      tok.expect("out");
      const auto out = tok.next_int();
      if (in <= 0 || out <= 0) throw IoError("non-positive layer dimension");
      DenseLayer layer;
      tok.expect("activation");
      layer.activation.kind = parse_activation(tok.next());
      tok.expect("slope");
      layer.activation.slope = tok.next_double();
      tok.expect("dropout");
      layer.dropout_rate = tok.next_double();
      tok.expect("weights");
      layer.weights = Matrix(static_cast<std::size_t>(out), static_cast<std::size_t>(in));
      for (double& w : layer.weights.values()) w = tok.next_double();
      tok.expect("bias");
      layer.bias.resize(static_cast<std::size_t>(out));
      for (double& b : layer.bias) b = tok.next_double();
      layers.push_back(std::move(layer));
    }
    tok.expect("end");
    MlpModel model(std::move(layers));
    if (static_cast<long long>(model.input_dim()) != input_dim ||
        static_cast<long long>(model.output_dim()) != output_dim) {
      throw IoError("model '" + name + "' header dims disagree with its layers");
    }
    models.push_back({std::move(name), std::move(model)});
  }
  return models;
}

void save_models(const std::filesystem::path& path, const std::vector<NamedModel>& models) {
  write_text_file(path, serialize_models(models));
}

std::vector<NamedModel> load_models(const std::filesystem::path& path) {
  return parse_models(read_text_file(path));
}

const MlpModel& find_model(const std::vector<NamedModel>& models, std::string_view name) {
  for (const auto& m : models) {
    if (m.name == name) return m.model;
  }
  throw IoError("checkpoint has no model named '" + std::string(name) + "'");
}

}  // namespace cforge
