public int[] makeLast(int[] nums) {
    int[] out = new int[nums.length];
    out[out.length - 1] = nums[nums.length - 1];
    return out;
}
