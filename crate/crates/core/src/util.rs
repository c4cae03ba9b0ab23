/// Compensated (Kahan) summation in a fixed order, so parallel callers that
/// hand over slices in row-major order always get the same bits back.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_terms() {
        // naive summation of 1e16 + many 1.0s loses the ones entirely
        let mut terms = vec![1e16];
        terms.extend(std::iter::repeat(1.0).take(1000));
        terms.push(-1e16);
        assert_eq!(kahan_sum(terms), 1000.0);
    }

    #[test]
    fn kahan_empty_is_zero() {
        assert_eq!(kahan_sum(std::iter::empty()), 0.0);
    }
}
