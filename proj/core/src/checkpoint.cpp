#include "adalora/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "adalora/errors.hpp"

namespace adalora {

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) { return json(m.values()); }

Matrix matrix_from_json(const json& j, int rows, int cols) {
    std::vector<double> data = j.get<std::vector<double>>();
    return Matrix(rows, cols, std::move(data));
}

} // namespace

std::string checkpoint_to_json(const ToyModel& model) {
    json doc;
    doc["format"] = "adalora-checkpoint";
    doc["version"] = 1;
    doc["adapter_set"] = model.adapter_set == AdapterSet::Svd    ? "svd"
                         : model.adapter_set == AdapterSet::Lora ? "lora"
                                                                 : "none";
    json adapters = json::array();
    if (model.adapter_set == AdapterSet::Svd) {
        for (const auto& ad : model.svd) {
            json a;
            a["matrix_id"] = ad.matrix_id;
            a["kind"] = kind_name(ad.kind);
            a["d1"] = ad.p.rows();
            a["d2"] = ad.q.cols();
            a["rank"] = ad.rank();
            a["alpha"] = ad.alpha;
            a["p"] = matrix_to_json(ad.p);
            a["lambda"] = matrix_to_json(ad.lambda);
            a["q"] = matrix_to_json(ad.q);
            a["mask"] = json(std::vector<int>(ad.mask.begin(), ad.mask.end()));
            adapters.push_back(std::move(a));
        }
    } else if (model.adapter_set == AdapterSet::Lora) {
        for (const auto& ad : model.lora) {
            json a;
            a["matrix_id"] = ad.matrix_id;
            a["kind"] = kind_name(ad.kind);
            a["d1"] = ad.b.rows();
            a["d2"] = ad.a.cols();
            a["rank"] = ad.rank;
            a["alpha"] = ad.alpha;
            a["a"] = matrix_to_json(ad.a);
            a["b"] = matrix_to_json(ad.b);
            a["mask"] = json(std::vector<int>(ad.doublet_mask.begin(), ad.doublet_mask.end()));
            adapters.push_back(std::move(a));
        }
    }
    doc["adapters"] = std::move(adapters);
    return doc.dump(2) + "\n";
}

void save_checkpoint(const ToyModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");
    out << checkpoint_to_json(model);
}

void load_checkpoint_from_json(ToyModel& model, const std::string& json_text) {
    json doc = json::parse(json_text, nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded()) throw InputError("checkpoint is not valid JSON");
    if (doc.value("format", "") != "adalora-checkpoint") {
        throw InputError("not an adapter checkpoint");
    }
    const std::string set = doc.value("adapter_set", "none");
    const json& adapters = doc.at("adapters");
    if (set == "svd") {
        if (model.adapter_set != AdapterSet::Svd ||
            model.svd.size() != adapters.size()) {
            throw InputError("checkpoint does not match model adapter layout");
        }
        for (const json& a : adapters) {
            const int id = a.at("matrix_id").get<int>();
            if (id < 0 || id >= model.n_matrices()) throw InputError("bad matrix_id");
            SvdAdapter& ad = model.svd[static_cast<std::size_t>(id)];
            const int d1 = a.at("d1").get<int>();
            const int d2 = a.at("d2").get<int>();
            const int rank = a.at("rank").get<int>();
            if (d1 != ad.p.rows() || d2 != ad.q.cols() || rank != ad.rank()) {
                throw InputError("checkpoint shape mismatch for matrix " + std::to_string(id));
            }
            ad.alpha = a.at("alpha").get<double>();
            ad.p = matrix_from_json(a.at("p"), d1, rank);
            ad.lambda = matrix_from_json(a.at("lambda"), 1, rank);
            ad.q = matrix_from_json(a.at("q"), rank, d2);
            auto mask = a.at("mask").get<std::vector<int>>();
            ad.mask.assign(mask.begin(), mask.end());
        }
    } else if (set == "lora") {
        if (model.adapter_set != AdapterSet::Lora ||
            model.lora.size() != adapters.size()) {
            throw InputError("checkpoint does not match model adapter layout");
        }
        for (const json& a : adapters) {
            const int id = a.at("matrix_id").get<int>();
            if (id < 0 || id >= model.n_matrices()) throw InputError("bad matrix_id");
            LoraAdapter& ad = model.lora[static_cast<std::size_t>(id)];
            const int d1 = a.at("d1").get<int>();
            const int d2 = a.at("d2").get<int>();
            const int rank = a.at("rank").get<int>();
            if (d1 != ad.b.rows() || d2 != ad.a.cols() || rank != ad.rank) {
                throw InputError("checkpoint shape mismatch for matrix " + std::to_string(id));
            }
            ad.alpha = a.at("alpha").get<double>();
            ad.a = matrix_from_json(a.at("a"), rank, d2);
            ad.b = matrix_from_json(a.at("b"), d1, rank);
            auto mask = a.at("mask").get<std::vector<int>>();
            ad.doublet_mask.assign(mask.begin(), mask.end());
        }
    } else {
        throw InputError("checkpoint has no adapters");
    }
}

void load_checkpoint(ToyModel& model, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    load_checkpoint_from_json(model, text);
}

} // namespace adalora
