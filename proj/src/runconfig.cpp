#include "xmodal/runconfig.hpp"

#include <fstream>
#include <sstream>

namespace xmodal {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw config_error("not a boolean: " + v);
}

void RunConfig::set(const std::string& key, const std::string& value) {
    try {
        if (key == "backbone.d_model") backbone.d_model = std::stoi(value);
        else if (key == "backbone.n_layers") backbone.n_layers = std::stoi(value);
        else if (key == "backbone.n_heads") backbone.n_heads = std::stoi(value);
        else if (key == "backbone.d_ff") backbone.d_ff = std::stoi(value);
        else if (key == "backbone.vocab_size") backbone.vocab_size = data.vocab_size = std::stoi(value);
        else if (key == "backbone.d_patch") backbone.d_patch = data.d_patch = std::stoi(value);
        else if (key == "backbone.max_t") backbone.max_t = std::stoi(value);
        else if (key == "backbone.attention_mode") backbone.attention_mode = attention_mode_from_string(value);
        else if (key == "backbone.precision") backbone.precision_bits = std::stoi(value);
        else if (key == "cpt.p_mlm") cpt.p_mlm = std::stod(value);
        else if (key == "cpt.r_mae") cpt.r_mae = std::stod(value);
        else if (key == "cpt.loss_weight") cpt.loss_weight = std::stod(value);
        else if (key == "cpt.learning_rate") cpt.learning_rate = std::stod(value);
        else if (key == "cpt.steps") cpt.steps = std::stoi(value);
        else if (key == "cpt.batch_size") cpt.batch_size = std::stoi(value);
        else if (key == "cpt.workers") cpt.workers = std::stoi(value);
        else if (key == "cpt.tie_mlm_head") cpt.tie_mlm_head = parse_bool(value);
        else if (key == "cpt.cost_gamma") cost_gamma = std::stod(value);
        else if (key == "cl.tau") cl.tau = std::stod(value);
        else if (key == "cl.learning_rate") cl.learning_rate = std::stod(value);
        else if (key == "cl.batch_size") cl.batch_size = std::stoi(value);
        else if (key == "cl.steps") cl.steps = std::stoi(value);
        else if (key == "cl.dedup_in_batch") cl.dedup_in_batch = parse_bool(value);
        else if (key == "cl.drop_partial") cl.drop_partial = parse_bool(value);
        else if (key == "data.vocab_size") data.vocab_size = backbone.vocab_size = std::stoi(value);
        else if (key == "data.grid_side") data.grid_side = std::stoi(value);
        else if (key == "data.d_patch") data.d_patch = backbone.d_patch = std::stoi(value);
        else if (key == "data.n_shapes") data.n_shapes = std::stoi(value);
        else if (key == "data.n_colors") data.n_colors = std::stoi(value);
        else if (key == "data.n_counts") data.n_counts = std::stoi(value);
        else if (key == "data.caption_train") data.caption_train = std::stoi(value);
        else if (key == "data.caption_eval") data.caption_eval = std::stoi(value);
        else if (key == "data.text_train") data.text_train = std::stoi(value);
        else if (key == "data.text_eval") data.text_eval = std::stoi(value);
        else if (key == "data.longform_train") data.longform_train = std::stoi(value);
        else if (key == "data.longform_eval") data.longform_eval = std::stoi(value);
        else if (key == "data.hard_negatives") data.hard_negatives = std::stoi(value);
        else if (key == "ablation.mlm") cpt.mlm_on = parse_bool(value);
        else if (key == "ablation.mae") cpt.mae_on = parse_bool(value);
        else if (key == "ablation.text_pairs") text_pairs_on = parse_bool(value);
        else if (key == "ablation.longform_pairs") longform_pairs_on = parse_bool(value);
        else if (key == "ablation.task_batching") cl.task_batching = parse_bool(value);
        else if (key == "run.seed") seed = std::stoull(value);
        else throw config_error("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
        throw config_error("bad value for " + key + ": " + value);
    } catch (const std::out_of_range&) {
        throw config_error("value out of range for " + key + ": " + value);
    }
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw config_error("line " + std::to_string(line_no) + ": malformed section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) throw config_error("key outside a section: " + key);
        cfg.set(section + "." + key, value);
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_text(ss.str());
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "[backbone]\n"
       << "d_model = " << backbone.d_model << "\n"
       << "n_layers = " << backbone.n_layers << "\n"
       << "n_heads = " << backbone.n_heads << "\n"
       << "d_ff = " << backbone.d_ff << "\n"
       << "vocab_size = " << backbone.vocab_size << "\n"
       << "d_patch = " << backbone.d_patch << "\n"
       << "max_t = " << backbone.max_t << "\n"
       << "attention_mode = " << to_string(backbone.attention_mode) << "\n"
       << "precision = " << backbone.precision_bits << "\n\n";
    os << "[cpt]\n"
       << "p_mlm = " << cpt.p_mlm << "\n"
       << "r_mae = " << cpt.r_mae << "\n"
       << "loss_weight = " << cpt.loss_weight << "\n"
       << "learning_rate = " << cpt.learning_rate << "\n"
       << "steps = " << cpt.steps << "\n"
       << "batch_size = " << cpt.batch_size << "\n"
       << "workers = " << cpt.workers << "\n"
       << "tie_mlm_head = " << (cpt.tie_mlm_head ? "true" : "false") << "\n"
       << "cost_gamma = " << cost_gamma << "\n\n";
    os << "[cl]\n"
       << "tau = " << cl.tau << "\n"
       << "learning_rate = " << cl.learning_rate << "\n"
       << "batch_size = " << cl.batch_size << "\n"
       << "steps = " << cl.steps << "\n"
       << "dedup_in_batch = " << (cl.dedup_in_batch ? "true" : "false") << "\n"
       << "drop_partial = " << (cl.drop_partial ? "true" : "false") << "\n\n";
    os << "[data]\n"
       << "vocab_size = " << data.vocab_size << "\n"
       << "grid_side = " << data.grid_side << "\n"
       << "d_patch = " << data.d_patch << "\n"
       << "n_shapes = " << data.n_shapes << "\n"
       << "n_colors = " << data.n_colors << "\n"
       << "n_counts = " << data.n_counts << "\n"
       << "caption_train = " << data.caption_train << "\n"
       << "caption_eval = " << data.caption_eval << "\n"
       << "text_train = " << data.text_train << "\n"
       << "text_eval = " << data.text_eval << "\n"
       << "longform_train = " << data.longform_train << "\n"
       << "longform_eval = " << data.longform_eval << "\n"
       << "hard_negatives = " << data.hard_negatives << "\n\n";
    os << "[ablation]\n"
       << "mlm = " << (cpt.mlm_on ? "true" : "false") << "\n"
       << "mae = " << (cpt.mae_on ? "true" : "false") << "\n"
       << "text_pairs = " << (text_pairs_on ? "true" : "false") << "\n"
       << "longform_pairs = " << (longform_pairs_on ? "true" : "false") << "\n"
       << "task_batching = " << (cl.task_batching ? "true" : "false") << "\n\n";
    os << "[run]\n"
       << "seed = " << seed << "\n";
    return os.str();
}

}  // namespace xmodal
