public int sum67(int[] nums) {
    int sum = 0
    for (int n : nums) sum += n;
    return sum;
}
