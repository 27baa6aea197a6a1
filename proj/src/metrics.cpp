#include "diffrec/metrics.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

#include "diffrec/io_util.hpp"

namespace diffrec {

namespace {
std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << v;
    return os.str();
}
}  // namespace

void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
    std::string out = "dataset,model,order,T,B,recall@1,recall@5,recall@10,ndcg@5,ndcg@10,invalid_rate,users\n";
    for (const auto& r : rows) {
        out += r.dataset + ',' + r.model + ',' + r.order + ',' + std::to_string(r.T) + ',' +
               std::to_string(r.B) + ',' + fmt(r.recall1) + ',' + fmt(r.recall5) + ',' + fmt(r.recall10) +
               ',' + fmt(r.ndcg5) + ',' + fmt(r.ndcg10) + ',' + fmt(r.invalid_rate) + ',' +
               std::to_string(r.users) + '\n';
    }
    atomic_write_file(path, out);
}

void write_generations(const std::filesystem::path& path, const std::vector<GenerationRow>& rows) {
    std::string out;
    for (const auto& r : rows) {
        nlohmann::json j;
        j["user_id"] = r.user_id;
        j["rank"] = r.rank;
        j["sid"] = r.sid;
        j["logprob"] = r.logprob;
        out += j.dump();
        out += '\n';
    }
    atomic_write_file(path, out);
}

}  // namespace diffrec
