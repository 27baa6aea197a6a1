#include "diffrec/trainer.hpp"

#include <sstream>

#include "diffrec/io_util.hpp"

namespace diffrec {

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
    std::string out = "epoch,step,loss_total,loss_item,loss_his,val_recall@10,wall_ms\n";
    for (const auto& r : rows) {
        std::ostringstream os;
        os.precision(6);
        os << std::fixed << r.epoch << ',' << r.step << ',' << r.loss_total << ',' << r.loss_item << ','
           << r.loss_his << ',';
        if (r.val_recall10 >= 0.0) os << r.val_recall10;
        os << ',' << r.wall_ms << '\n';
        out += os.str();
    }
    atomic_write_file(path, out);
}

}  // namespace diffrec
