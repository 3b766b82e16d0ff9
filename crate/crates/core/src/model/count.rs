use super::config::ModelConfig;

/// Closed-form number of trainable scalars.
///
/// One expert of width `w` over input width `M'` with `n` blocks and output
/// width `o` holds `M'·w + w + (n − 1)(w² + w) + w·o + o` scalars. The MLP is
/// a single expert of width `d_block`; a mixture holds `K` experts of width
/// `d_block_per_expert` plus a `K × (M' + 1)` gate. The embedding adds
/// `T·d + d` per numeric feature.
pub fn count_params(config: &ModelConfig) -> usize {
    let m = config.input_width();
    let w = config.arch.expert_width();
    let n = config.arch.n_blocks;
    let o = config.output_dim();
    let expert = m * w + w + (n - 1) * (w * w + w) + w * o + o;
    let k = config.num_experts();
    let gate = if config.family().is_moe() { k * (m + 1) } else { 0 };
    let embedding = config
        .arch
        .embedding
        .map_or(0, |e| config.input.n_numeric * (e.n_bins * e.d_embedding + e.d_embedding));
    embedding + k * expert + gate
}

/// Parameters outside the embedding layer.
pub fn count_backbone_params(config: &ModelConfig) -> usize {
    let embedding = config
        .arch
        .embedding
        .map_or(0, |e| config.input.n_numeric * (e.n_bins * e.d_embedding + e.d_embedding));
    count_params(config) - embedding
}
