#include "kwcp/model_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kwcp/error.hpp"

namespace kwcp {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json rows_of(const Eigen::MatrixXd& m)
{
    ordered_json out = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        out.push_back(std::move(row));
    }
    return out;
}

Eigen::MatrixXd matrix_of(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what)
{
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
        throw Error(ErrorKind::Schema, what + " has the wrong number of rows");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw Error(ErrorKind::Schema, what + " row " + std::to_string(i) + " has the wrong length");
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
    }
    return m;
}

} // namespace

std::string model_to_json(const SavedModel& saved)
{
    const auto& m = saved.model;
    ordered_json j;
    j["rank"] = m.rank();
    j["w"] = std::vector<double>(m.w.data(), m.w.data() + m.w.size());
    j["q1"] = rows_of(m.q1);
    j["q2"] = rows_of(m.q2);
    j["q3"] = rows_of(m.q3);
    j["gene_ids"] = saved.gene_ids;
    j["cell_type_labels"] = saved.cell_type_labels;
    j["time_values"] = saved.time_values;
    j["seed"] = saved.seed;
    return j.dump(1) + "\n";
}

SavedModel model_from_json(const std::string& text, const std::string& origin)
{
    try {
        const auto j = nlohmann::json::parse(text);
        SavedModel out;
        out.gene_ids = j.at("gene_ids").get<std::vector<std::string>>();
        out.cell_type_labels = j.at("cell_type_labels").get<std::vector<std::string>>();
        out.time_values = j.at("time_values").get<std::vector<double>>();
        out.seed = j.at("seed").get<std::uint64_t>();
        const int R = j.at("rank").get<int>();
        if (R < 0) throw Error(ErrorKind::Schema, origin + ": negative rank");
        const auto p = static_cast<Eigen::Index>(out.gene_ids.size());
        const auto C = static_cast<Eigen::Index>(out.cell_type_labels.size());
        const auto T = static_cast<Eigen::Index>(out.time_values.size());
        const auto w = j.at("w").get<std::vector<double>>();
        if (static_cast<int>(w.size()) != R) throw Error(ErrorKind::Schema, origin + ": w length differs from rank");
        out.model = CPModel(static_cast<int>(p), static_cast<int>(C), static_cast<int>(T), R);
        for (int r = 0; r < R; ++r) out.model.w(r) = w[static_cast<std::size_t>(r)];
        out.model.q1 = matrix_of(j.at("q1"), p, R, origin + ": q1");
        out.model.q2 = matrix_of(j.at("q2"), C, R, origin + ": q2");
        out.model.q3 = matrix_of(j.at("q3"), T, R, origin + ": q3");
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Schema, origin + ": " + e.what());
    }
}

void write_model_json(const SavedModel& saved, const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Schema, "cannot write " + path);
    out << model_to_json(saved);
}

SavedModel read_model_json(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Schema, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str(), path);
}

} // namespace kwcp
