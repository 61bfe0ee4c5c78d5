use super::{Real, Seq2SeqModel};
use crate::error::{Error, Result};

/// Evenly spaced decoder layers including the first and last. A single
/// layer maps to the last one.
pub fn default_layer_indices(teacher_layers: usize, student_layers: usize) -> Result<Vec<usize>> {
    if student_layers == 0 || student_layers > teacher_layers {
        return Err(Error::config(
            "decoder_layers",
            format!("student needs between 1 and {teacher_layers} layers, got {student_layers}"),
        ));
    }
    if student_layers == 1 {
        return Ok(vec![teacher_layers - 1]);
    }
    let span = (teacher_layers - 1) as f64 / (student_layers - 1) as f64;
    Ok((0..student_layers).map(|i| (i as f64 * span).round() as usize).collect())
}

/// Shrink a teacher by keeping the decoder layers at `indices`; every other
/// parameter is copied unchanged.
pub fn init_student_from_teacher<T: Real>(teacher: &Seq2SeqModel<T>, indices: &[usize]) -> Result<Seq2SeqModel<T>> {
    if indices.is_empty() {
        return Err(Error::config("decoder_layer_indices", "must not be empty"));
    }
    let available = teacher.params.decoder.len();
    if let Some(&bad) = indices.iter().find(|&&i| i >= available) {
        return Err(Error::config(
            "decoder_layer_indices",
            format!("index {bad} out of range for {available} teacher layers"),
        ));
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("decoder_layer_indices", "must be strictly increasing"));
    }
    let mut student = teacher.clone();
    student.config.decoder_layers = indices.len();
    student.params.decoder = indices.iter().map(|&i| teacher.params.decoder[i].clone()).collect();
    Ok(student)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::ModelConfig;

    fn teacher(layers: usize) -> Seq2SeqModel<f32> {
        let cfg = ModelConfig {
            vocab_size: 9,
            d_model: 8,
            num_heads: 2,
            ff_dim: 8,
            encoder_layers: 1,
            decoder_layers: layers,
            max_positions: 8,
            dropout_rate: 0.0,
        };
        Seq2SeqModel::new(cfg, 3).unwrap()
    }

    #[test]
    fn identity_copy() {
        let t = teacher(3);
        assert_eq!(init_student_from_teacher(&t, &[0, 1, 2]).unwrap(), t);
    }

    #[test]
    fn twelve_to_three() {
        let t = teacher(12);
        let s = init_student_from_teacher(&t, &[0, 5, 11]).unwrap();
        assert_eq!(s.config.decoder_layers, 3);
        assert_eq!(s.params.decoder[2], t.params.decoder[11]);
        assert_eq!(s.params.decoder[1], t.params.decoder[5]);
        assert_eq!(s.params.encoder, t.params.encoder);
        assert_eq!(s.params.lm_head, t.params.lm_head);
        assert_eq!(s.params.token_embedding, t.params.token_embedding);
    }

    #[test]
    fn four_to_two() {
        let t = teacher(4);
        let s = init_student_from_teacher(&t, &[0, 3]).unwrap();
        assert_eq!(s.params.decoder[0], t.params.decoder[0]);
        assert_eq!(s.params.decoder[1], t.params.decoder[3]);
        assert_ne!(s.params.decoder[1], t.params.decoder[1]);
    }

    #[test]
    fn rejects_bad_indices() {
        let t = teacher(4);
        assert!(init_student_from_teacher(&t, &[4]).is_err());
        assert!(init_student_from_teacher(&t, &[2, 1]).is_err());
        assert!(init_student_from_teacher(&t, &[1, 1]).is_err());
        assert!(init_student_from_teacher(&t, &[]).is_err());
    }

    #[test]
    fn default_indices() {
        assert_eq!(default_layer_indices(2, 1).unwrap(), vec![1]);
        assert_eq!(default_layer_indices(12, 3).unwrap(), vec![0, 6, 11]);
        assert_eq!(default_layer_indices(4, 2).unwrap(), vec![0, 3]);
        assert_eq!(default_layer_indices(4, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(default_layer_indices(2, 3).is_err());
    }
}
